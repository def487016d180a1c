"""The moment map on the Bergman space and its derivative identities.

For an H-orthonormal frame ``s`` the pointwise moment map is the rank-one
projector ``mu(p) = s(p) s(p)^* / |s(p)|^2``; integrating it against a volume
density gives ``mu_Omega``, a positive matrix of trace ``Vol``.  All matrices
returned here live in the orthonormal frame, and the frame travels with them.

Tangent vectors at H are Hermitian matrices ``A`` in that frame; the geodesic
in direction ``A`` moves the frame sections to ``exp(tA/2) s`` (so the form
itself becomes ``exp(-tA)`` in the old frame).  With this normalisation

    tr(B dmu(A)) + <H_A, H_B>_{L^2(Omega)} = Re tr(A B mu_Omega).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import check_volume_density
from .quantization import (
    HermitianInnerProduct,
    frame_sections,
    norm_squared,
    orthonormal_frame,
    scaled_frame,
)


def herm(a):
    return 0.5 * (a + a.conj().T)


def expm_herm(a, t=1.0):
    """``exp(t a)`` for Hermitian ``a``."""
    w, v = np.linalg.eigh(herm(a))
    return (v * np.exp(t * w)) @ v.conj().T


def logm_herm(a):
    w, v = np.linalg.eigh(herm(a))
    return (v * np.log(w)) @ v.conj().T


def hs_norm(a) -> float:
    return float(np.sqrt(np.sum(np.abs(a) ** 2)))


def op_norm(a) -> float:
    return float(np.abs(np.linalg.eigvalsh(herm(a))).max())


@dataclass(frozen=True, eq=False)
class MomentMapValue:
    mu: np.ndarray
    frame: np.ndarray

    @property
    def mu0(self) -> np.ndarray:
        n = self.mu.shape[0]
        return self.mu - (np.trace(self.mu).real / n) * np.eye(n)

    @property
    def trace(self) -> float:
        return float(np.trace(self.mu).real)

    @property
    def hs_norm(self) -> float:
        return hs_norm(self.mu)

    @property
    def hs_norm0(self) -> float:
        return hs_norm(self.mu0)

    @property
    def op_norm(self) -> float:
        return op_norm(self.mu)


def _projectors(basis, frame):
    s = frame_sections(basis, frame)
    return s, norm_squared(s)


def moment_map(basis, H: HermitianInnerProduct, omega, frame=None) -> MomentMapValue:
    """``mu_Omega = int s s^* / |s|^2 Omega`` in the H-orthonormal frame."""
    omega = check_volume_density(basis.geom, omega)
    if frame is None:
        frame = orthonormal_frame(basis, H)
    s, rho = _projectors(basis, frame)
    c = basis.weights * omega.reshape(-1) / rho
    mu = herm((s.T * c) @ s.conj())
    return MomentMapValue(mu, frame)


def pointwise_moment(basis, frame, node: int) -> np.ndarray:
    s, rho = _projectors(basis, frame)
    return np.outer(s[node], s[node].conj()) / rho[node]


def matrix_potential(basis, H, A, frame=None) -> np.ndarray:
    """``H_A(p) = tr(A mu(p))``."""
    if frame is None:
        frame = orthonormal_frame(basis, H)
    s, rho = _projectors(basis, frame)
    val = np.einsum("pa,ab,pb->p", s.conj(), A, s).real / rho
    return val.reshape(basis.geom.shape)


def l2_inner(basis, f, g, omega) -> float:
    return float(np.sum(basis.geom.weights * omega * f * g))


def geodesic_point(basis, H: HermitianInnerProduct, A, t, frame=None):
    """Form and frame at time ``t`` along the geodesic from ``H`` in direction ``A``."""
    if frame is None:
        frame = orthonormal_frame(basis, H)
    new_frame = expm_herm(A, 0.5 * t) @ frame
    inv = np.linalg.inv(new_frame)
    hs = herm(inv @ inv.conj().T)
    return HermitianInnerProduct.from_scaled(basis, hs), new_frame


def moment_map_derivative(basis, H, omega, A, eps: float = 1e-4, frame=None,
                          richardson: bool = True) -> np.ndarray:
    """Central finite difference of ``mu_Omega`` along the geodesic with velocity ``A``.

    With ``richardson`` the step-``eps`` and step-``2 eps`` differences are
    combined to cancel the ``O(eps^2)`` error term.
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ValueError(f"finite-difference step {eps} outside [1e-6, 1e-2]")
    if frame is None:
        frame = orthonormal_frame(basis, H)

    def mu_at(t):
        Ht, ft = geodesic_point(basis, H, A, t, frame)
        return moment_map(basis, Ht, omega, frame=ft).mu

    d1 = (mu_at(eps) - mu_at(-eps)) / (2 * eps)
    if not richardson:
        return herm(d1)
    d2 = (mu_at(2 * eps) - mu_at(-2 * eps)) / (4 * eps)
    return herm((4 * d1 - d2) / 3)


def moment_map_derivative_exact(basis, H, omega, A, frame=None) -> np.ndarray:
    """Closed form ``int (A mu + mu A)/2 - H_A mu  Omega`` (the finite-difference target)."""
    omega = check_volume_density(basis.geom, omega)
    if frame is None:
        frame = orthonormal_frame(basis, H)
    s, rho = _projectors(basis, frame)
    c = basis.weights * omega.reshape(-1) / rho
    ha = np.einsum("pa,ab,pb->p", s.conj(), A, s).real / rho
    mu = (s.T * c) @ s.conj()
    mu_h = (s.T * (c * ha)) @ s.conj()
    return herm(0.5 * (A @ mu + mu @ A) - mu_h)


# --------------------------------------------------------------------------
# distances on the Bergman space


def _check_pd(hs):
    w = np.linalg.eigvalsh(herm(hs))
    if w[0] <= 0:
        raise ValueError(f"matrix is not positive definite (smallest eigenvalue {w[0]:.3e})")


def dist_flat(H0: HermitianInnerProduct, H1: HermitianInnerProduct, k: int | None = None) -> float:
    """``(tr (H0 - H1)^2 / k^2)^(1/2)`` on the raw matrices."""
    k = H0.k if k is None else k
    _check_pd(H0.matrix)
    _check_pd(H1.matrix)
    d = H0.matrix - H1.matrix
    return float(np.sqrt(np.trace(d @ d).real) / k)


def relative_log(H0, H1, basis=None) -> np.ndarray:
    """Eigenvalues of ``log(H0^{-1/2} H1 H0^{-1/2})``."""
    import scipy.linalg

    a, b = (H0.scaled(basis), H1.scaled(basis)) if basis is not None else (H0.matrix, H1.matrix)
    _check_pd(a)
    _check_pd(b)
    w = scipy.linalg.eigh(herm(b), herm(a), eigvals_only=True)
    return np.log(w)


def dist_geodesic(H0, H1, k: int | None = None, basis=None, projective: bool = False) -> float:
    """Hilbert-Schmidt norm of ``log(H0^{-1/2} H1 H0^{-1/2})`` divided by ``k``.

    ``projective`` drops the scalar part of the logarithm, i.e. measures the
    distance between the rays ``{c H0}`` and ``{c H1}``.  Pass ``k=1`` for the
    unscaled Riemannian distance of the Bergman space.
    """
    k = H0.k if k is None else k
    lam = relative_log(H0, H1, basis)
    if projective:
        lam = lam - lam.mean()
    return float(np.sqrt(np.sum(lam ** 2)) / k)


# --------------------------------------------------------------------------
# operator-norm estimates


@dataclass
class GrowthReport:
    lhs: float          # ||mu_Omega(H1)||_op
    rhs: float          # exp(2 dist) ||mu_Omega(H0)||_op
    distance: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.slack >= -1e-9


def opnorm_growth_check(H0, H1, basis, omega) -> GrowthReport:
    """Both sides of ``||mu(H1)||_op <= exp(2 d(H0, H1)) ||mu(H0)||_op``.

    ``d`` is the unscaled geodesic distance ``||log(H0^{-1/2} H1 H0^{-1/2})||_HS``.
    """
    d = dist_geodesic(H0, H1, k=1, basis=basis)
    m0 = moment_map(basis, H0, omega).op_norm
    m1 = moment_map(basis, H1, omega).op_norm
    return GrowthReport(lhs=m1, rhs=float(np.exp(2 * d) * m0), distance=d)


def derivative_identity_residual(basis, H, omega, A, B, eps=1e-4, frame=None) -> float:
    """``|tr(B dmu(A)) + <H_A, H_B> - Re tr(A B mu_Omega)|`` with a finite-difference dmu."""
    if frame is None:
        frame = orthonormal_frame(basis, H)
    dmu = moment_map_derivative(basis, H, omega, A, eps=eps, frame=frame)
    mu = moment_map(basis, H, omega, frame=frame).mu
    ha = matrix_potential(basis, H, A, frame)
    hb = matrix_potential(basis, H, B, frame)
    lhs = np.trace(B @ dmu).real + l2_inner(basis, ha, hb, omega)
    return float(abs(lhs - np.trace(A @ B @ mu).real))


def derivative_bound_slack(basis, H, omega, A, eps=1e-4, frame=None) -> float:
    """``2 ||A|| ||mu_Omega||_op - ||dmu(A)||_HS`` (non-negative when the bound holds)."""
    if frame is None:
        frame = orthonormal_frame(basis, H)
    dmu = moment_map_derivative(basis, H, omega, A, eps=eps, frame=frame)
    mu = moment_map(basis, H, omega, frame=frame)
    return 2 * hs_norm(A) * mu.op_norm - hs_norm(dmu)


def hilb_opnorm_bound(basis, psi, omega):
    """``(||I_{Omega,k}||_op, sup Omega / omega_h)`` for the Bergman basis of ``h``.

    ``I_{Omega,k} = int <s_i, s_j>_h Omega`` with ``s_i`` orthonormal for the
    smooth-volume inner product ``int <.,.>_h omega_h``.
    """
    from .quantization import FibrewiseMetric, _hilb

    h = FibrewiseMetric(basis.k, psi)
    u = h.kahler_density(basis.geom)
    frame = orthonormal_frame(basis, _hilb(basis, h, u))
    s = frame_sections(basis, frame) * np.sqrt(h.weight())[:, None]
    c = basis.weights * np.asarray(omega).reshape(-1)
    i_mat = herm((s.T * c) @ s.conj())
    return op_norm(i_mat), float(np.max(omega / u))


def bergman_moment_gap(basis, psi, omega) -> float:
    """``||(N+1) mu_Omega(h_k) - I_{Omega,k}||_op / ||I_{Omega,k}||_op`` at the Bergman metric of ``h``."""
    from .quantization import FibrewiseMetric, _hilb

    h = FibrewiseMetric(basis.k, psi)
    u = h.kahler_density(basis.geom)
    H = _hilb(basis, h, u)
    frame = orthonormal_frame(basis, H)
    s = frame_sections(basis, frame) * np.sqrt(h.weight())[:, None]
    c = basis.weights * np.asarray(omega).reshape(-1)
    i_mat = herm((s.T * c) @ s.conj())
    mu = moment_map(basis, H, omega, frame=frame).mu
    return op_norm(basis.size * mu - i_mat) / op_norm(i_mat)


def random_hermitian(n, rng, scale=1.0):
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * herm(x) / np.sqrt(n)


def random_unitary(n, rng):
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(x)
    return q * (np.diag(r) / np.abs(np.diag(r)))


__all__ = [
    "MomentMapValue", "moment_map", "matrix_potential", "moment_map_derivative",
    "moment_map_derivative_exact", "dist_flat", "dist_geodesic", "opnorm_growth_check",
    "derivative_identity_residual", "derivative_bound_slack", "hilb_opnorm_bound", "bergman_moment_gap",
    "geodesic_point", "expm_herm", "logm_herm", "hs_norm", "op_norm", "scaled_frame",
]
