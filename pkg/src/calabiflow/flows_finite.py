"""The rescaled Omega-balancing flow on the Bergman space of O(k).

In the current orthonormal frame the Gram matrix moves with velocity
``U = k ((N+1)/Vol) mu0_Omega``, the moment map of ``Omega`` measured in the
class of O(k).  Updates are exponential, which keeps the form positive for any
step size::

    G(t + dt) = exp(dt * U)                (in the old frame)
    frame'    = exp(-dt * U / 2) frame

so that ``frame' H' frame'^* = I`` without re-factorising.  The induced
fibrewise potential on O(1) then moves with velocity ``beta_k``, the balancing
potential, which is the quantized counterpart of ``1 - Omega / omega_phi``.

``order=2`` is the exponential midpoint rule: ``U`` is evaluated half a step
ahead and pulled back to the current frame as a (non-Hermitian) generator
``xi`` of ``G -> g G g^*``, giving a second-order scheme at twice the cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .geometry import VOL, ma_density
from .moment import expm_herm, hs_norm, moment_map
from .quantization import (
    FibrewiseMetric,
    HermitianInnerProduct,
    fs_potential_from_frame,
    hilb_omega,
    orthonormal_frame,
)

logger = logging.getLogger(__name__)


class FlowError(RuntimeError):
    """A flow failed to converge; ``trace`` holds what was computed."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True, eq=False)
class BalancingFlowState:
    t: float
    frame: np.ndarray          # C, acting on rescaled section values
    frame_inv: np.ndarray      # C^{-1}
    k: int
    mu0: np.ndarray | None = field(default=None, repr=False)
    mu_op: float = float("nan")
    dt: float = 0.0

    @property
    def scaled_matrix(self) -> np.ndarray:
        m = self.frame_inv @ self.frame_inv.conj().T
        return 0.5 * (m + m.conj().T)

    def inner_product(self, basis) -> HermitianInnerProduct:
        return HermitianInnerProduct.from_scaled(basis, self.scaled_matrix)

    @property
    def mu0_norm(self) -> float:
        return hs_norm(self.mu0)

    def potential(self, basis) -> np.ndarray:
        """FS potential on O(1) of the current inner product."""
        return fs_potential_from_frame(basis, self.frame)


def initial_state(basis, H0: HermitianInnerProduct, omega, dt: float = 0.0) -> BalancingFlowState:
    frame = orthonormal_frame(basis, H0)
    mm = moment_map(basis, H0, omega, frame=frame)
    return BalancingFlowState(t=0.0, frame=frame, frame_inv=np.linalg.inv(frame), k=basis.k,
                              mu0=mm.mu0, mu_op=mm.op_norm, dt=dt)


def bergman_start(basis, omega, psi0=None) -> HermitianInnerProduct:
    """``Hilb_Omega(h0^k)`` for the configured initial metric (reference if ``psi0`` is None)."""
    psi0 = np.zeros(basis.geom.shape) if psi0 is None else psi0
    return hilb_omega(basis, FibrewiseMetric(basis.k, psi0), omega)


def velocity(state: BalancingFlowState) -> np.ndarray:
    """Hermitian velocity of the Gram matrix in the current frame (trace free)."""
    return state.k * state.mu0.shape[0] / VOL * state.mu0


def balancing_flow_step(state: BalancingFlowState, basis, omega, dt: float,
                        order: int = 1) -> BalancingFlowState:
    if dt <= 0:
        raise ValueError("time step must be positive")
    u = velocity(state)
    if order == 1:
        return _advance(state, basis, omega, expm_herm(u, -0.5 * dt), expm_herm(u, 0.5 * dt), dt)
    if order != 2:
        raise ValueError("order must be 1 or 2")
    half = _advance(state, basis, omega, expm_herm(u, -0.25 * dt), expm_herm(u, 0.25 * dt), 0.5 * dt)
    # The form moves as G -> g G g^* with generator xi; at the midpoint
    # G_mid = E E^* (E = exp(dt u / 4)) and xi = E U_mid E^{-1} / 2.
    e = expm_herm(u, 0.25 * dt)
    e_inv = expm_herm(u, -0.25 * dt)
    xi = 0.5 * dt * (e @ velocity(half) @ e_inv)
    return _advance(state, basis, omega, scipy.linalg.expm(-xi), scipy.linalg.expm(xi), dt)


def _advance(state, basis, omega, g_inv, g, dt):
    """Move the form to ``g G g^*`` in the current frame; the new frame is ``g^{-1} C``."""
    frame = g_inv @ state.frame
    frame_inv = state.frame_inv @ g
    H = HermitianInnerProduct.from_scaled(basis, _gram(frame_inv))
    mm = moment_map(basis, H, omega, frame=frame)
    return replace(state, t=state.t + dt, frame=frame, frame_inv=frame_inv,
                   mu0=mm.mu0, mu_op=mm.op_norm, dt=dt)


def _gram(frame_inv):
    m = frame_inv @ frame_inv.conj().T
    return 0.5 * (m + m.conj().T)


@dataclass
class FlowControls:
    t_end: float = np.inf
    dt: float = 0.05
    dt_min: float = 1e-8
    dt_max: float = 2.0
    growth: float = 1.5
    tol: float = 0.0                 # stop once ||mu0||_HS < tol
    max_steps: int = 100000
    increase_factor: float = 1.0 + 1e-6
    adaptive: bool = True
    snapshot_times: tuple = ()
    order: int = 1


@dataclass
class BalancingFlowResult:
    state: BalancingFlowState
    rows: list
    snapshots: dict
    converged: bool
    rejected: int = 0
    forms: dict = field(default_factory=dict)

    @property
    def columns(self):
        return ["t", "dt", "mu0_hs", "mu_op"]


def run_balancing_flow(H0: HermitianInnerProduct, basis, omega,
                       controls: FlowControls | None = None, on_row=None) -> BalancingFlowResult:
    """Integrate the balancing flow to ``t_end`` or until ``||mu0|| < tol``.

    A step is rejected (and ``dt`` halved) when ``||mu0||_HS`` grows by more
    than ``increase_factor``; accepted steps let ``dt`` grow by ``growth`` up to
    ``dt_max``.  Steps are clipped to land exactly on ``snapshot_times`` and
    ``t_end``; at those times the FS potential is stored.
    """
    c = controls or FlowControls()
    state = initial_state(basis, H0, omega, dt=c.dt)
    rows = []
    snapshots = {}
    forms = {}
    pending = sorted(t for t in c.snapshot_times if t >= 0)

    def record(s):
        row = (s.t, s.dt, s.mu0_norm, s.mu_op)
        rows.append(row)
        if on_row is not None:
            on_row(row)

    def take_snapshots(s):
        while pending and abs(pending[0] - s.t) <= 1e-12 * max(1.0, s.t):
            t = pending.pop(0)
            snapshots[t] = s.potential(basis)
            forms[t] = s.inner_product(basis)

    record(state)
    take_snapshots(state)
    dt = c.dt
    rejected = 0
    for _ in range(c.max_steps):
        if state.mu0_norm < c.tol or state.t >= c.t_end - 1e-14:
            return BalancingFlowResult(state, rows, snapshots, state.mu0_norm < c.tol or c.tol == 0, rejected, forms)
        if state.mu0_norm == 0.0:
            return BalancingFlowResult(state, rows, snapshots, True, rejected, forms)
        step = dt
        targets = [c.t_end] + pending
        horizon = min(targets) - state.t
        clipped = step >= horizon
        if clipped:
            step = horizon
        new = balancing_flow_step(state, basis, omega, step, order=c.order)
        if c.adaptive and new.mu0_norm > c.increase_factor * state.mu0_norm:
            dt = 0.5 * step
            rejected += 1
            if dt < c.dt_min:
                raise FlowError(f"balancing flow step underflow at t={state.t:.6g}",
                                BalancingFlowResult(state, rows, snapshots, False, rejected, forms))
            continue
        if clipped:
            new = replace(new, t=min(targets))
        state = new
        record(state)
        take_snapshots(state)
        if c.adaptive and not clipped:
            dt = min(c.dt_max, dt * c.growth)
    raise FlowError(f"balancing flow did not finish within {c.max_steps} steps",
                    BalancingFlowResult(state, rows, snapshots, False, rejected, forms))


def flow_density(basis, potential) -> np.ndarray:
    """Density of ``omega_k(t) = (1/k) iota^* omega_FS`` against ``omega_ref``."""
    return ma_density(basis.geom, potential)


def bergman_path_of(potentials: dict, basis, omega) -> dict:
    """``t -> Hilb_Omega(h_t^k)``: the Bergman path of a time-indexed family of potentials."""
    return {t: hilb_omega(basis, FibrewiseMetric(basis.k, psi), omega) for t, psi in potentials.items()}
