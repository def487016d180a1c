"""Maps between fibrewise metrics on O(k) and inner products on its sections.

Matrices are stored in the monomial basis ``e_j = z^j``.  Internally every
computation goes through the SU(2)-rescaled values held by
:class:`~calabiflow.geometry.SectionBasis`, in which the round metric is the
identity; this keeps Cholesky factors well conditioned for k up to 64.

A fibrewise metric on O(k) is ``h = h_ref^k exp(-k psi)`` with ``h_ref`` the
round metric; ``psi`` is a Kahler potential for ``omega_ref`` in the convention
of :func:`~calabiflow.geometry.ma_density`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .geometry import VOL, SectionBasis, check_volume_density, ma_density

MAX_CONDITION = 1e12


class QuantizationError(ArithmeticError):
    """Numerically non-positive or ill-conditioned inner product."""


@dataclass(frozen=True, eq=False)
class HermitianInnerProduct:
    """Positive Hermitian form on H^0(O(k)) in the monomial basis."""

    matrix: np.ndarray
    k: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n = self.k + 1
        if m.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix for k={self.k}, got {m.shape}")
        scale = max(np.abs(m).max(), np.finfo(float).tiny)
        if np.abs(m - m.conj().T).max() > 1e-12 * scale:
            raise ValueError("inner product matrix is not Hermitian")
        object.__setattr__(self, "matrix", 0.5 * (m + m.conj().T))

    @property
    def size(self) -> int:
        return self.k + 1

    def scaled(self, basis: SectionBasis) -> np.ndarray:
        """The same form in the rescaled basis used for computation."""
        d = np.exp(basis.scale)
        return d[:, None] * self.matrix * d[None, :]

    @classmethod
    def from_scaled(cls, basis: SectionBasis, scaled) -> "HermitianInnerProduct":
        d = np.exp(-basis.scale)
        return cls(d[:, None] * scaled * d[None, :], basis.k)

    def __mul__(self, c):
        return HermitianInnerProduct(self.matrix * float(c), self.k)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class FibrewiseMetric:
    """``h = h_ref^k exp(-k * potential)`` on O(k)."""

    k: int
    potential: np.ndarray

    def weight(self) -> np.ndarray:
        """``h / h_ref^k`` at every node (flattened)."""
        return np.exp(-self.k * np.asarray(self.potential).reshape(-1))

    def kahler_density(self, geom) -> np.ndarray:
        """Density of ``omega_h = omega_ref + i d dbar psi``; raises if not positive."""
        return ma_density(geom, self.potential)


def reference_metric(basis: SectionBasis) -> FibrewiseMetric:
    return FibrewiseMetric(basis.k, np.zeros(basis.geom.shape))


class Weighting(enum.Enum):
    SMOOTH_VOLUME = "smooth"   # Hilb(h) = int h omega_h^n
    GIVEN = "given"            # Hilb_Omega(h) = int h Omega


# --------------------------------------------------------------------------
# orthonormal frames


def scaled_frame(hs: np.ndarray) -> np.ndarray:
    """Matrix ``C`` with ``C hs C^* = I`` for a positive Hermitian ``hs``.

    Cholesky after diagonal equilibration; if that fails, an eigenvalue
    factorization is tried before giving up.
    """
    diag = np.real(np.diag(hs))
    if not np.all(diag > 0):
        raise QuantizationError(f"inner product has non-positive diagonal entry {diag.min():.3e}")
    d = 1.0 / np.sqrt(diag)
    eq = d[:, None] * hs * d[None, :]
    try:
        low = np.linalg.cholesky(eq)
        c = scipy.linalg.solve_triangular(low, np.diag(d).astype(complex), lower=True)
    except np.linalg.LinAlgError:
        evals, vecs = np.linalg.eigh(eq)
        if evals.min() <= 0:
            raise QuantizationError(
                f"inner product is not positive definite (smallest eigenvalue {evals.min():.3e})"
            ) from None
        c = (vecs / np.sqrt(evals)).conj().T * d[None, :]
        return c
    cond = _condition(eq)
    if cond > MAX_CONDITION:
        raise QuantizationError(f"inner product condition number {cond:.2e} exceeds {MAX_CONDITION:.0e}")
    return c


def _condition(eq):
    evals = np.linalg.eigvalsh(eq)
    if evals[0] <= 0:
        raise QuantizationError(f"inner product is not positive definite (smallest eigenvalue {evals[0]:.3e})")
    return evals[-1] / evals[0]


def orthonormal_frame(basis: SectionBasis, H: HermitianInnerProduct) -> np.ndarray:
    """Frame ``C`` (acting on rescaled section values) orthonormalising ``H``."""
    return scaled_frame(H.scaled(basis))


def frame_sections(basis: SectionBasis, frame: np.ndarray) -> np.ndarray:
    """Reference-weighted values ``s_a(p)`` of the frame sections, ``(n_nodes, N+1)``."""
    return basis.values @ frame.T


def norm_squared(sections: np.ndarray) -> np.ndarray:
    return np.einsum("pa,pa->p", sections, sections.conj()).real


def weighted_gram(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_p weights_p values_p values_p^*`` with a fixed summation order."""
    return (values.T * weights) @ values.conj()


# --------------------------------------------------------------------------
# Hilb, FS, T_k


def hilb_omega(basis: SectionBasis, h: FibrewiseMetric, omega) -> HermitianInnerProduct:
    """``H_ab = int <e_a, e_b>_h Omega`` for a volume density ``Omega``."""
    omega = check_volume_density(basis.geom, omega)
    return _hilb(basis, h, omega)


def _hilb(basis, h, density):
    c = basis.weights * np.asarray(density).reshape(-1) * h.weight()
    g = weighted_gram(basis.values, c)
    g = 0.5 * (g + g.conj().T)
    evmin = np.linalg.eigvalsh(_equilibrate(g))[0]
    if evmin <= 0:
        raise QuantizationError(f"Hilb produced a non-positive matrix (smallest eigenvalue {evmin:.3e})")
    return HermitianInnerProduct.from_scaled(basis, g)


def _equilibrate(g):
    d = 1.0 / np.sqrt(np.real(np.diag(g)))
    return d[:, None] * g * d[None, :]


def fs_potential_from_frame(basis: SectionBasis, frame: np.ndarray) -> np.ndarray:
    s = frame_sections(basis, frame)
    rho = norm_squared(s)
    n1 = basis.size
    return (np.log(VOL / n1 * rho) / basis.k).reshape(basis.geom.shape)


def fs(basis: SectionBasis, H: HermitianInnerProduct) -> FibrewiseMetric:
    """Fubini-Study metric: an H-orthonormal basis has pointwise norm^2 ``(N+1)/Vol``."""
    frame = orthonormal_frame(basis, H)
    return FibrewiseMetric(basis.k, fs_potential_from_frame(basis, frame))


def tk_step(basis: SectionBasis, H: HermitianInnerProduct, omega) -> HermitianInnerProduct:
    return hilb_omega(basis, fs(basis, H), omega)


def normalize_scale(basis: SectionBasis, H: HermitianInnerProduct) -> HermitianInnerProduct:
    """Representative of the ray ``{cH}`` whose FS potential has zero mean.

    T_k commutes with scalings, so fixed points come in rays; this picks the
    one for which the round metric is exactly ``diag(1 / ((k+1) C(k, j)))``.
    """
    psi = fs(basis, H).potential
    return H * np.exp(basis.k * basis.geom.mean(psi))


@dataclass
class BalancedResult:
    H: HermitianInnerProduct
    iterations: int
    mu0_norm: float
    history: list
    converged: bool


def iterate_tk(basis: SectionBasis, omega, H0: HermitianInnerProduct | None = None,
               tol: float = 1e-10, max_iter: int = 500) -> BalancedResult:
    """Fixed-point iteration of T_k until ``||mu0_Omega||_HS < tol``."""
    from .moment import moment_map

    H = H0 if H0 is not None else HermitianInnerProduct(np.eye(basis.size), basis.k)
    history = []
    for it in range(max_iter + 1):
        mm = moment_map(basis, H, omega)
        history.append(mm.hs_norm0)
        if mm.hs_norm0 < tol:
            return BalancedResult(normalize_scale(basis, H), it, mm.hs_norm0, history, True)
        if it == max_iter:
            break
        H = tk_step(basis, H, omega)
        # keep the ray representative near unit scale; T_k is homogeneous
        H = normalize_scale(basis, H)
    return BalancedResult(normalize_scale(basis, H), max_iter, history[-1], history, False)


def random_inner_product(basis: SectionBasis, rng: np.random.Generator,
                         spread: float = 1.0) -> HermitianInnerProduct:
    """Random positive form, well conditioned in the rescaled basis."""
    n = basis.size
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    g = np.eye(n) + spread * (x @ x.conj().T) / n
    return HermitianInnerProduct.from_scaled(basis, g)


# --------------------------------------------------------------------------
# Bergman function, Berezin transform, balancing potential


def bergman_density(basis: SectionBasis, h: FibrewiseMetric,
                    weighting: Weighting = Weighting.SMOOTH_VOLUME, omega=None) -> np.ndarray:
    """``rho_k(h) = sum |s_i|_h^2`` for ``s_i`` orthonormal in Hilb(h) or Hilb_Omega(h)."""
    if weighting is Weighting.SMOOTH_VOLUME:
        density = h.kahler_density(basis.geom)
    else:
        if omega is None:
            raise ValueError("Weighting.GIVEN requires a volume density")
        density = check_volume_density(basis.geom, omega)
    H = _hilb(basis, h, density)
    s = frame_sections(basis, orthonormal_frame(basis, H))
    return (norm_squared(s) * h.weight()).reshape(basis.geom.shape)


def berezin_qk(basis: SectionBasis, h: FibrewiseMetric, omega, f) -> np.ndarray:
    """``Q_k f(p) = (1/k) int |K(p, q)|^2 f(q) Omega(q)``, ``K`` the Bergman kernel of Hilb_Omega(h)."""
    H = hilb_omega(basis, h, omega)
    s = frame_sections(basis, orthonormal_frame(basis, H)) * np.sqrt(h.weight())[:, None]
    c = basis.weights * np.asarray(omega).reshape(-1) * np.asarray(f, dtype=float).reshape(-1)
    # X_ab = int conj(s_a) s_b f Omega
    x = (s.conj().T * c) @ s
    q = np.einsum("pa,ab,pb->p", s, x, s.conj()).real / basis.k
    return q.reshape(basis.geom.shape)


def balancing_potential(basis: SectionBasis, H: HermitianInnerProduct, omega,
                        frame: np.ndarray | None = None) -> np.ndarray:
    """Balancing potential ``beta_k(p) = -((N+1)/Vol) tr(mu0_Omega(H) mu(p))``.

    The factor ``(N+1)/Vol`` measures ``Omega`` in the class of ``O(k)``
    (total mass ``dim H^0``), which is the normalisation under which
    ``beta_k -> 1 - Omega / omega^n`` for Bergman metrics.
    """
    from .moment import matrix_potential, moment_map

    if frame is None:
        frame = orthonormal_frame(basis, H)
    mm = moment_map(basis, H, omega, frame=frame)
    return -(basis.size / VOL) * matrix_potential(basis, H, mm.mu0, frame=frame)


def bergman_inner_product(basis: SectionBasis, psi, omega) -> HermitianInnerProduct:
    """``Hilb_Omega(h^k)`` for the metric with potential ``psi`` on O(1)."""
    return hilb_omega(basis, FibrewiseMetric(basis.k, psi), omega)
