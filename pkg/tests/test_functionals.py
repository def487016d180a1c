import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from calabiflow.functionals import (
    aubin_I,
    aubin_J,
    cocycle_check,
    f0_derivative,
    f0_flow_derivative,
    f0_omega,
)
from calabiflow.geometry import normalize_density

from .conftest import smooth_sphere_field, smooth_torus_field

seeds = st.integers(0, 2**31 - 1)


@pytest.fixture(scope="module")
def f_torus(torus):
    return normalize_density(torus, np.exp(0.4 * np.sin(torus.x) + 0.3 * np.cos(torus.y)))


def test_constants_are_invisible(torus, f_torus):
    c = np.full(torus.shape, 2.5)
    assert abs(aubin_I(torus, c)) < 1e-14
    assert abs(aubin_J(torus, c)) < 1e-14
    # F0 sees constants only through int c (f - 1) = 0
    assert abs(f0_omega(torus, f_torus, c)) < 1e-14


def test_f0_vanishes_at_reference(sphere, omega_cos):
    assert f0_omega(sphere, omega_cos, np.zeros(sphere.shape)) == 0.0


@given(seeds)
def test_i_equals_2j(sphere, seed):
    phi = smooth_sphere_field(sphere, np.random.default_rng(seed), amplitude=0.5)
    i_val, j_val = aubin_I(sphere, phi), aubin_J(sphere, phi)
    assert abs(i_val - 2 * j_val) < 1e-12 * max(1.0, abs(i_val))


def test_j_against_adaptive_quadrature(torus):
    phi = smooth_torus_field(torus, np.random.default_rng(0), amplitude=0.3)
    ref, _ = integrate.quad(lambda s: aubin_I(torus, s * phi) / s, 0.0, 1.0, epsabs=1e-15)
    assert aubin_J(torus, phi) == pytest.approx(ref, rel=1e-12)


@given(seeds)
def test_energy_inequalities(torus, seed):
    phi = smooth_torus_field(torus, np.random.default_rng(seed), amplitude=0.5)
    i_val, j_val = aubin_I(torus, phi), aubin_J(torus, phi)
    assert i_val >= -1e-15
    assert j_val >= -1e-15
    assert i_val - j_val >= -1e-15


@given(seeds)
def test_derivative_matches_finite_difference(sphere, omega_cos, seed):
    rng = np.random.default_rng(seed)
    phi = smooth_sphere_field(sphere, rng, amplitude=0.2)
    v = smooth_sphere_field(sphere, rng, amplitude=0.2)
    h = 1e-5
    fd = (f0_omega(sphere, omega_cos, phi + h * v) - f0_omega(sphere, omega_cos, phi - h * v)) / (2 * h)
    assert abs(fd - f0_derivative(sphere, omega_cos, phi, v)) < 1e-9


def test_flow_derivative(torus, f_torus):
    phi = smooth_torus_field(torus, np.random.default_rng(1), amplitude=0.05)
    u = 1.0 + 0.5 * torus.laplacian(phi)
    assert u.min() > 0
    pd = 1.0 - f_torus / u
    assert f0_flow_derivative(torus, f_torus, phi) == pytest.approx(
        f0_derivative(torus, f_torus, phi, pd), rel=1e-12)
    assert f0_flow_derivative(torus, f_torus, phi) < 0


class TestCocycle:
    def test_trivial_second_point(self, torus, f_torus):
        phi = smooth_torus_field(torus, np.random.default_rng(2), amplitude=0.3)
        assert cocycle_check(torus, f_torus, phi, np.zeros(torus.shape)) < 1e-15

    def test_equal_points(self, torus, f_torus):
        phi = smooth_torus_field(torus, np.random.default_rng(3), amplitude=0.3)
        assert cocycle_check(torus, f_torus, phi, phi) < 1e-14

    @given(seeds)
    def test_random_pairs(self, sphere, omega_cos, seed):
        rng = np.random.default_rng(seed)
        a = smooth_sphere_field(sphere, rng, amplitude=0.3)
        b = smooth_sphere_field(sphere, rng, amplitude=0.3)
        assert cocycle_check(sphere, omega_cos, a, b) < 1e-9
