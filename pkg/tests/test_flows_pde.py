import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calabiflow.flows_pde import (
    PdeControls,
    StepUnderflowError,
    linearized_negative_solution,
    make_state,
    omega_kahler_rhs,
    run_negative_curvature_flow,
    run_omega_kahler_flow,
    spectral_solve_linear,
    v_normalize,
)
from calabiflow.geometry import PositivityError, ma_density, make_torus_backend, normalize_density

from .conftest import smooth_torus_field


@pytest.fixture(scope="module")
def t16():
    return make_torus_backend(16, 16)


def test_reference_is_stationary(torus, sphere):
    for g in (torus, sphere):
        ones = np.ones(g.shape)
        assert np.abs(omega_kahler_rhs(g, np.zeros(g.shape), ones)).max() == 0.0
        res = run_omega_kahler_flow(g, ones)
        assert res.converged and res.steps == 0


def test_single_mode_solution(t16):
    eps = 0.2
    f = 1.0 + eps * np.cos(t16.x)
    res = run_omega_kahler_flow(t16, f, PdeControls(tol=1e-10))
    assert res.converged
    target = spectral_solve_linear(t16, f)
    assert np.abs(target + 2 * eps * np.cos(t16.x)).max() < 1e-13
    d = res.state.phi - target
    assert np.ptp(d) < 1e-9


def test_maximum_principle_and_f0(t16):
    f = normalize_density(t16, np.exp(0.4 * np.sin(t16.x) + 0.3 * np.cos(t16.y)))
    res = run_omega_kahler_flow(t16, f, PdeControls(tol=1e-8))
    assert res.max_principle_violation <= 1e-8
    assert res.f0_increase <= 1e-14
    assert np.all(np.diff(res.f0_values) <= 1e-14)


@given(st.integers(0, 2**31 - 1))
def test_weighted_mean_of_phidot_vanishes(t16, seed):
    phi = smooth_torus_field(t16, np.random.default_rng(seed), amplitude=0.05)
    f = normalize_density(t16, np.exp(0.3 * np.cos(t16.x + t16.y)))
    s = make_state(t16, phi, f)
    # int phidot u = int (u - f) = 0, both having unit mass
    assert abs(t16.integrate(s.phidot * s.u)) < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_v_normalize(t16, seed):
    phi = smooth_torus_field(t16, np.random.default_rng(seed)) + 3.0
    v = v_normalize(t16, phi)
    assert abs(t16.mean(v)) < 1e-14
    assert np.abs(v_normalize(t16, v) - v).max() < 1e-14


def test_grid_refinement():
    out = []
    for n in (32, 64):
        g = make_torus_backend(n, n)
        f = normalize_density(g, np.exp(0.4 * np.sin(g.x) + 0.3 * np.cos(g.y)))
        out.append(spectral_solve_linear(g, f))
    coarse = out[0]
    fine = out[1][::2, ::2]
    assert np.abs(coarse - fine).max() < 1e-6


def test_positivity_error():
    g = make_torus_backend(16, 16)
    with pytest.raises(PositivityError):
        run_omega_kahler_flow(g, np.ones(g.shape), phi0=5.0 * np.cos(g.x))


def test_step_underflow(t16):
    f = normalize_density(t16, np.exp(0.4 * np.sin(t16.x)))
    with pytest.raises(StepUnderflowError):
        run_omega_kahler_flow(t16, f, PdeControls(dt_min=1.0))


def test_snapshots_and_rows(t16):
    f = normalize_density(t16, 1.0 + 0.2 * np.sin(t16.y))
    res = run_omega_kahler_flow(t16, f, PdeControls(t_max=0.5, tol=0.0, snapshot_times=(0.25,), record_every=5))
    assert 0.25 in res.snapshots
    times = [r[0] for r in res.rows]
    assert times[-1] == 0.5 and np.all(np.diff(times) > 0)
    assert len(res.rows[0]) == len(res.columns)


class TestNegativeVariant:
    def test_zero_is_stationary(self, t16):
        phi, t, hist = run_negative_curvature_flow(t16, np.zeros(t16.shape))
        assert hist[0] == 0.0 and np.all(phi == 0)

    @pytest.mark.parametrize("eps", [0.02, 0.04])
    def test_linear_response(self, t16, eps):
        f = eps * np.cos(t16.x)
        phi, _, hist = run_negative_curvature_flow(t16, f, tol=1e-11)
        assert hist[-1] < 1e-11
        lin = linearized_negative_solution(t16, f)
        # the stationary equation is log u = f + phi, so the gap is O(eps^2)
        assert np.abs(phi - lin).max() < 2 * eps ** 2
        u = ma_density(t16, phi)
        assert np.abs(np.log(u) - f - phi).max() < 1e-10
