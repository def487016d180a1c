import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calabiflow.geometry import make_section_basis, make_sphere_backend, normalize_density
from calabiflow.moment import (
    dist_flat,
    dist_geodesic,
    expm_herm,
    geodesic_point,
    hilb_opnorm_bound,
    hs_norm,
    l2_inner,
    derivative_identity_residual,
    derivative_bound_slack,
    logm_herm,
    matrix_potential,
    moment_map,
    moment_map_derivative,
    moment_map_derivative_exact,
    opnorm_growth_check,
    random_hermitian,
    random_unitary,
)
from calabiflow.quantization import HermitianInnerProduct, random_inner_product, reference_metric, hilb_omega

from .conftest import smooth_sphere_field

seeds = st.integers(0, 2**31 - 1)


@pytest.fixture(scope="module")
def grid():
    return make_sphere_backend(24, 48)


@pytest.fixture(scope="module")
def b5(grid):
    return make_section_basis(grid, 5)


@pytest.fixture(scope="module")
def omega(grid):
    return normalize_density(grid, 1.0 + 0.3 * np.cos(grid.theta))


def test_trace_is_volume(b5, omega):
    for seed in range(100):
        H = random_inner_product(b5, np.random.default_rng(seed), spread=2.0)
        assert moment_map(b5, H, omega).trace == pytest.approx(1.0, abs=1e-12)


def test_reference_is_balanced(b5, grid):
    ones = np.ones(grid.shape)
    H = hilb_omega(b5, reference_metric(b5), ones)
    mm = moment_map(b5, H, ones)
    assert np.abs(mm.mu - np.eye(6) / 6).max() < 1e-13
    assert mm.hs_norm0 < 1e-13


@given(seeds)
def test_mu_positive(b5, omega, seed):
    H = random_inner_product(b5, np.random.default_rng(seed))
    mm = moment_map(b5, H, omega)
    assert np.linalg.eigvalsh(mm.mu).min() > 0
    assert mm.op_norm <= 1.0 + 1e-12


def test_identity_direction_is_trivial(b5, omega):
    H = random_inner_product(b5, np.random.default_rng(0))
    d = moment_map_derivative(b5, H, omega, np.eye(6))
    assert np.abs(d).max() < 1e-10
    assert np.abs(matrix_potential(b5, H, np.eye(6)) - 1.0).max() < 1e-13


def test_finite_difference_matches_closed_form(b5, omega):
    rng = np.random.default_rng(1)
    H = random_inner_product(b5, rng)
    A = random_hermitian(6, rng)
    fd = moment_map_derivative(b5, H, omega, A, eps=1e-3)
    ex = moment_map_derivative_exact(b5, H, omega, A)
    assert np.abs(fd - ex).max() < 1e-9


def test_step_range(b5, omega):
    H = random_inner_product(b5, np.random.default_rng(2))
    with pytest.raises(ValueError):
        moment_map_derivative(b5, H, omega, np.eye(6), eps=0.1)


def test_derivative_is_trace_free(b5, omega):
    rng = np.random.default_rng(3)
    H = random_inner_product(b5, rng)
    d = moment_map_derivative_exact(b5, H, omega, random_hermitian(6, rng))
    assert abs(np.trace(d)) < 1e-13


@given(seeds)
def test_l2_identity(b5, omega, seed):
    rng = np.random.default_rng(seed)
    H = random_inner_product(b5, rng)
    A, B = random_hermitian(6, rng), random_hermitian(6, rng)
    assert derivative_identity_residual(b5, H, omega, A, B) < 1e-6


@given(seeds)
def test_derivative_nonnegative_along_itself(b5, omega, seed):
    rng = np.random.default_rng(seed)
    H = random_inner_product(b5, rng)
    A = random_hermitian(6, rng)
    d = moment_map_derivative_exact(b5, H, omega, A)
    assert np.trace(A @ d).real >= -1e-8


@given(seeds)
def test_l3_bound(b5, omega, seed):
    rng = np.random.default_rng(seed)
    H = random_inner_product(b5, rng)
    assert derivative_bound_slack(b5, H, omega, random_hermitian(6, rng, scale=3.0)) >= -1e-9


@given(seeds)
def test_matrix_potential_l2_bound(b5, omega, seed):
    rng = np.random.default_rng(seed)
    H = random_inner_product(b5, rng)
    A = random_hermitian(6, rng)
    ha = matrix_potential(b5, H, A)
    mu = moment_map(b5, H, omega)
    assert l2_inner(b5, ha, ha, omega) <= hs_norm(A) ** 2 * mu.op_norm + 1e-12


@given(seeds, st.floats(0.05, 2.0))
def test_opnorm_growth(b5, omega, seed, scale):
    rng = np.random.default_rng(seed)
    H0 = random_inner_product(b5, rng)
    H1, _ = geodesic_point(b5, H0, random_hermitian(6, rng, scale=scale), 1.0)
    assert opnorm_growth_check(H0, H1, b5, omega).slack >= -1e-9


def test_hilb_opnorm_bound(b5, grid, omega):
    psi = smooth_sphere_field(grid, np.random.default_rng(4), amplitude=0.05)
    lhs, rhs = hilb_opnorm_bound(b5, psi, omega)
    assert lhs <= rhs + 1e-12


class TestDistances:
    def test_scalar_multiple(self, b5):
        H = random_inner_product(b5, np.random.default_rng(5))
        c = 0.7
        d = dist_geodesic(H, np.exp(c) * H, basis=b5)
        assert d == pytest.approx(abs(c) * np.sqrt(6) / 5, rel=1e-12)
        assert dist_geodesic(H, np.exp(c) * H, basis=b5, projective=True) < 1e-12

    @given(seeds)
    def test_symmetric(self, b5, seed):
        rng = np.random.default_rng(seed)
        H0, H1 = random_inner_product(b5, rng), random_inner_product(b5, rng)
        assert dist_geodesic(H0, H1, basis=b5) == pytest.approx(dist_geodesic(H1, H0, basis=b5), rel=1e-10)
        assert dist_flat(H0, H1) == pytest.approx(dist_flat(H1, H0), rel=1e-14)

    @given(seeds)
    def test_unitary_invariance(self, b5, seed):
        rng = np.random.default_rng(seed)
        H0, H1 = random_inner_product(b5, rng), random_inner_product(b5, rng)
        g = random_unitary(6, rng) @ expm_herm(random_hermitian(6, rng))
        a = HermitianInnerProduct.from_scaled(b5, g @ H0.scaled(b5) @ g.conj().T)
        b = HermitianInnerProduct.from_scaled(b5, g @ H1.scaled(b5) @ g.conj().T)
        assert dist_geodesic(a, b, basis=b5) == pytest.approx(dist_geodesic(H0, H1, basis=b5), rel=1e-9)

    def test_geodesic_length(self, b5):
        rng = np.random.default_rng(6)
        H = random_inner_product(b5, rng)
        A = random_hermitian(6, rng)
        Ht, _ = geodesic_point(b5, H, A, 1.0)
        assert dist_geodesic(H, Ht, k=1, basis=b5) == pytest.approx(hs_norm(A), rel=1e-10)

    def test_rejects_indefinite(self, b5):
        H = random_inner_product(b5, np.random.default_rng(7))
        bad = HermitianInnerProduct(-H.matrix, 5)
        with pytest.raises(ValueError):
            dist_flat(H, bad)


def test_logm_inverts_expm():
    a = random_hermitian(7, np.random.default_rng(8))
    assert np.abs(logm_herm(expm_herm(a)) - a).max() < 1e-12
