"""The Omega-Kahler flow ``d phi/dt = 1 - f / u(phi)`` and its negative-c1 variant.

Here ``f = Omega / omega_ref`` is the volume density (not its logarithm) and
``u = 1 + Delta(phi)/2`` the Monge-Ampere density.  Time stepping is explicit
RK4 with a step bounded by the parabolic stiffness of the linearisation
``d/dt phidot = (f / u^2) (1/2) Delta phidot``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import functionals
from .geometry import PositivityError, ma_density

logger = logging.getLogger(__name__)

RK4_STABILITY = 2.785


class StepUnderflowError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PdeFlowState:
    t: float
    phi: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    phidot: np.ndarray = field(repr=False)


def omega_kahler_rhs(geom, phi, f, u=None) -> np.ndarray:
    """``1 - f / u``; raises :class:`PositivityError` if ``u`` is not positive."""
    if u is None:
        u = ma_density(geom, phi)
    elif not np.all(u > 0):
        raise PositivityError("Kahler positivity lost", nodes=np.argwhere(~(u > 0)))
    return 1.0 - f / u


def v_normalize(geom, phi) -> np.ndarray:
    """``phi`` minus its ``omega_ref`` mean."""
    return phi - geom.mean(phi)


def make_state(geom, phi, f, t=0.0) -> PdeFlowState:
    u = ma_density(geom, phi)
    return PdeFlowState(t, phi, u, omega_kahler_rhs(geom, phi, f, u))


def stable_dt(geom, f, u, safety: float) -> float:
    rate = np.max(f / u ** 2) * 0.5 * geom.eigenvalue_max
    return safety * RK4_STABILITY / rate


def rk4_step(geom, rhs, phi, dt, k1=None):
    if k1 is None:
        k1 = rhs(phi)
    k2 = rhs(phi + 0.5 * dt * k1)
    k3 = rhs(phi + 0.5 * dt * k2)
    k4 = rhs(phi + dt * k3)
    return phi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class PdeControls:
    t_max: float = 50.0
    tol: float = 1e-8                # on ||phidot||_inf and ||u - f||_inf
    safety: float = 0.4
    dt_min: float = 1e-12
    max_steps: int = 2_000_000
    record_every: int = 1
    snapshot_times: tuple = ()
    monitor_tol: float = 1e-8


TRACE_COLUMNS = [
    "t", "dt", "phidot_sup", "phidot_inf", "phidot_norm", "bound_sup", "bound_inf",
    "v_norm", "F0", "I", "J", "ma_residual", "oscillation_energy",
]


@dataclass
class PdeFlowResult:
    state: PdeFlowState
    rows: list
    snapshots: dict
    converged: bool
    steps: int
    max_principle_violation: float
    f0_increase: float
    f0_values: np.ndarray = field(repr=False, default=None)
    f0_times: np.ndarray = field(repr=False, default=None)
    columns: list = field(default_factory=lambda: list(TRACE_COLUMNS))


def _diagnostics(geom, state, f, dt, bounds):
    phi, u, pd = state.phi, state.u, state.phidot
    i_val = functionals.aubin_I(geom, phi, u=u)
    j_val = functionals.aubin_J(geom, phi)
    f0 = j_val + geom.integrate(phi * (f - 1.0))
    pd_mean = geom.integrate(pd * u)
    energy = geom.integrate((pd - pd_mean) ** 2 * u)
    return (
        state.t, dt, float(pd.max()), float(pd.min()), float(np.abs(pd).max()),
        bounds[0], bounds[1], float(np.abs(v_normalize(geom, phi)).max()),
        f0, i_val, j_val, float(np.abs(u - f).max()), energy,
    )


def run_omega_kahler_flow(geom, f, controls: PdeControls | None = None, phi0=None,
                          on_row=None) -> PdeFlowResult:
    """Integrate from ``phi0`` (default 0) until ``||phidot||_inf`` and ``||u - f||_inf`` drop below ``tol``.

    Every accepted step is checked against the maximum-principle bounds
    ``inf(1 - f) <= phidot <= sup(1 - f)`` and for monotone decrease of F0;
    the largest violations are returned with the result.
    """
    c = controls or PdeControls()
    f = np.asarray(f, dtype=float)
    phi = np.zeros(geom.shape) if phi0 is None else np.asarray(phi0, dtype=float)
    bounds = (float(np.max(1.0 - f)), float(np.min(1.0 - f)))
    state = make_state(geom, phi, f)
    rows, snapshots = [], {}
    pending = sorted(c.snapshot_times)
    f0_vals, f0_times = [], []
    worst_mp = 0.0
    worst_f0 = -np.inf

    lap = geom.laplacian

    def rhs(p):
        u = lap(p)
        u *= 0.5
        u += 1.0
        if u.min() <= 0:
            raise PositivityError("Kahler positivity lost inside a stage", nodes=np.argwhere(~(u > 0)))
        return 1.0 - f / u

    def emit(row):
        rows.append(row)
        if on_row is not None:
            on_row(row)

    row = _diagnostics(geom, state, f, 0.0, bounds)
    emit(row)
    f0_vals.append(row[8])
    f0_times.append(0.0)
    while pending and pending[0] <= 0.0:
        snapshots[pending.pop(0)] = state
    steps = 0
    dt = 0.0
    while True:
        done = (np.abs(state.phidot).max() < c.tol and np.abs(state.u - f).max() < c.tol)
        if done or state.t >= c.t_max - 1e-14 or steps >= c.max_steps:
            if rows[-1][0] != state.t:
                emit(_diagnostics(geom, state, f, dt, bounds))
            break
        dt = stable_dt(geom, f, state.u, c.safety)
        if dt < c.dt_min:
            raise StepUnderflowError(f"time step {dt:.3e} below minimum at t={state.t:.6g}")
        target = min([c.t_max] + pending)
        clipped = state.t + dt >= target
        if clipped:
            dt = target - state.t
        try:
            phi = rk4_step(geom, rhs, state.phi, dt, k1=state.phidot)
            new_t = target if clipped else state.t + dt
            state = make_state(geom, phi, f, new_t)
        except PositivityError as exc:
            exc.time = state.t
            raise
        steps += 1
        pd = state.phidot
        worst_mp = max(worst_mp, float(pd.max() - bounds[0]), float(bounds[1] - pd.min()))
        # J = I / 2 at n = 1; reuses u instead of another Laplacian
        f0 = geom.integrate(state.phi * (f - 0.5 * (1.0 + state.u)))
        worst_f0 = max(worst_f0, f0 - f0_vals[-1])
        f0_vals.append(f0)
        f0_times.append(state.t)
        while pending and abs(pending[0] - state.t) <= 1e-12 * max(1.0, state.t):
            snapshots[pending.pop(0)] = state
        if steps % c.record_every == 0 or clipped:
            emit(_diagnostics(geom, state, f, dt, bounds))
    converged = bool(np.abs(state.phidot).max() < c.tol and np.abs(state.u - f).max() < c.tol)
    return PdeFlowResult(
        state=state, rows=rows, snapshots=snapshots, converged=converged, steps=steps,
        max_principle_violation=max(worst_mp, 0.0), f0_increase=worst_f0,
        f0_values=np.array(f0_vals), f0_times=np.array(f0_times),
    )


def spectral_solve_linear(geom, f) -> np.ndarray:
    """Mean-free solution of the stationary equation ``1 + Delta(phi)/2 = f`` (exact at n = 1)."""
    return 2.0 * geom.inverse_laplacian(np.asarray(f, dtype=float) - 1.0)


# --------------------------------------------------------------------------
# negative first Chern class variant


def negative_flow_rhs(geom, phi, f, u=None) -> np.ndarray:
    """``1 - exp(f + phi) / u``, from ``omega_phi^n = exp(f + phi) omega^n / (1 - phidot)``."""
    if u is None:
        u = ma_density(geom, phi)
    return 1.0 - np.exp(f + phi) / u


def negative_curvature_flow_step(geom, phi, f, dt) -> np.ndarray:
    return rk4_step(geom, lambda p: negative_flow_rhs(geom, p, f), phi, dt)


def run_negative_curvature_flow(geom, f, tol=1e-10, safety=0.4, t_max=200.0, max_steps=2_000_000):
    """Run the variant to its stationary point ``u = exp(f + phi)``; returns ``(phi, t, phidot_sup_history)``."""
    f = np.asarray(f, dtype=float)
    phi = np.zeros(geom.shape)
    t = 0.0
    history = []
    for _ in range(max_steps):
        u = ma_density(geom, phi)
        pd = negative_flow_rhs(geom, phi, f, u)
        history.append(float(np.abs(pd).max()))
        if history[-1] < tol or t >= t_max:
            break
        rate = np.max(np.exp(f + phi) / u ** 2) * 0.5 * geom.eigenvalue_max + np.max(np.exp(f + phi) / u)
        dt = min(safety * RK4_STABILITY / rate, t_max - t)
        phi = negative_curvature_flow_step(geom, phi, f, dt)
        t += dt
    return phi, t, np.array(history)


def linearized_negative_solution(geom, f) -> np.ndarray:
    """Solution of ``Delta(phi)/2 - phi = f``, the linearisation of the variant's stationary equation."""
    return geom.spectral_multiply(f, lambda lam: -1.0 / (0.5 * lam + 1.0))
