"""Model polarized surfaces: quadrature grids, spectral Laplacians, section bases.

Two backends are provided.  The sphere is CP^1 polarized by O(1), discretised
with Gauss-Legendre nodes in cos(theta) times an equispaced azimuthal grid; the
flat torus R^2 / 2 pi Z^2 is a uniform periodic grid and only supports the PDE
side of the package (no theta-function sections).

Conventions
-----------
* Quadrature weights integrate against the reference Kahler form ``omega_ref``
  normalised to total volume 1.
* ``laplacian`` is fixed by ``i d dbar phi = (1/2) (Delta phi) omega`` where
  ``omega`` is the curvature form of the polarization.  On the sphere this gives
  ``Delta Y_l = -2 l (l + 1) Y_l``; on the torus it is ``d_xx + d_yy``.  The
  Monge-Ampere density is then ``u = 1 + Delta(phi) / 2`` on both backends.
* Fields are real arrays of grid shape ``(n_theta, n_phi)`` or ``(n_x, n_y)``.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
from scipy.special import gammaln, xlogy

VOL = 1.0


class Kind(enum.Enum):
    SPHERE = "sphere"
    TORUS = "torus"


class GeometryError(ValueError):
    """Invalid geometry construction or unsupported operation."""


class PositivityError(ArithmeticError):
    """A Kahler form lost positivity (Monge-Ampere density <= 0 somewhere)."""

    def __init__(self, message, nodes=None, time=None):
        super().__init__(message)
        self.nodes = nodes
        self.time = time


def _normalized_legendre(lmax: int, x: np.ndarray) -> np.ndarray:
    """Associated Legendre functions normalised on [-1, 1].

    Returns ``P[m, l, i]`` with ``int_{-1}^{1} P[m, l]^2 dx = 1`` for ``l >= m``
    and zeros for ``l < m``.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    p = np.zeros((lmax + 1, lmax + 1, x.size))
    pmm = np.full(x.size, np.sqrt(0.5))
    for m in range(lmax + 1):
        if m > 0:
            pmm = -np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
        p[m, m] = pmm
        if m + 1 <= lmax:
            p[m, m + 1] = np.sqrt(2.0 * m + 3.0) * x * pmm
        for ell in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * ell * ell - 1.0) / (ell * ell - m * m))
            b = np.sqrt(((ell - 1.0) ** 2 - m * m) / (4.0 * (ell - 1.0) ** 2 - 1.0))
            p[m, ell] = a * (x * p[m, ell - 1] - b * p[m, ell - 2])
    return p


@dataclass(frozen=True, eq=False)
class GeometryBackend:
    """Common surface of the two model geometries.

    Attributes
    ----------
    kind : Kind
    shape : tuple of int
        Grid shape; every field on this backend has this shape.
    weights : ndarray
        Positive quadrature weights against ``omega_ref``; they sum to 1.
    """

    kind: Kind
    shape: tuple
    weights: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def integrate(self, f) -> float:
        return float(np.sum(self.weights * f))

    def mean(self, f) -> float:
        return self.integrate(f) / VOL

    def inner(self, f, g) -> float:
        return self.integrate(f * g)

    def constant(self, c=1.0) -> np.ndarray:
        return np.full(self.shape, float(c))

    @property
    def eigenvalue_max(self) -> float:
        """Largest eigenvalue of ``-laplacian`` resolved on the grid."""
        raise NotImplementedError

    def laplacian(self, f) -> np.ndarray:
        return self.spectral_multiply(f, lambda lam: -lam)

    def inverse_laplacian(self, f) -> np.ndarray:
        """Mean-free solution ``g`` of ``laplacian(g) = f - mean(f)``."""
        return self.spectral_multiply(
            f, lambda lam: np.where(lam > 0, -1.0 / np.where(lam > 0, lam, 1.0), 0.0)
        )

    def spectral_multiply(self, f, multiplier) -> np.ndarray:
        """Apply ``multiplier(lambda)`` mode by mode, ``lambda`` the eigenvalue of -Delta."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class SphereBackend(GeometryBackend):
    """CP^1 with the round Fubini-Study form of total area 1."""

    theta: np.ndarray = field(default=None, repr=False)
    phi: np.ndarray = field(default=None, repr=False)
    lmax: int = 0
    _lap_mats: np.ndarray = field(default=None, repr=False)

    @property
    def n_theta(self) -> int:
        return self.shape[0]

    @property
    def n_phi(self) -> int:
        return self.shape[1]

    @property
    def cos_theta(self) -> np.ndarray:
        return np.cos(self.theta)

    @property
    def eigenvalue_max(self) -> float:
        return 2.0 * self.lmax * (self.lmax + 1)

    def degree_eigenvalue(self, ell):
        return 2.0 * ell * (ell + 1)

    @functools.cached_property
    def _legendre(self):
        x = np.cos(self.theta[:, 0])
        return _normalized_legendre(self.lmax, x)

    @functools.cached_property
    def _gauss_weights(self):
        return self.weights[:, 0] * 2.0 * self.n_phi

    def _multiplier_mats(self, multiplier):
        p = self._legendre
        w = self._gauss_weights
        ell = np.arange(self.lmax + 1)
        mult = np.asarray(multiplier(self.degree_eigenvalue(ell)), dtype=float)
        mult = np.broadcast_to(mult, ell.shape)
        # mats[m] = P_m^T diag(mult) P_m diag(w)
        return np.einsum("mli,l,mlj,j->mij", p, mult, p, w)

    def spectral_multiply(self, f, multiplier) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        mats = self._multiplier_mats(multiplier)
        return self._apply(f, mats)

    def _apply(self, f, mats):
        fh = np.fft.rfft(f, axis=1)
        out = np.zeros_like(fh)
        nm = self.lmax + 1
        out[:, :nm] = np.einsum("mij,jm->im", mats, fh[:, :nm])
        return np.fft.irfft(out, n=self.n_phi, axis=1)

    def laplacian(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        # constants are annihilated exactly, not up to recurrence round-off
        return self._apply(f - self.mean(f), self._lap_mats)

    def spectral_coefficients(self, f):
        """Coefficients ``c[m, l]`` (complex, m >= 0) of ``f`` in normalised harmonics."""
        fh = np.fft.rfft(np.asarray(f, dtype=float), axis=1) / self.n_phi
        nm = self.lmax + 1
        return np.einsum("mli,i,im->ml", self._legendre, self._gauss_weights, fh[:, :nm])

    def harmonic(self, ell: int, m: int = 0) -> np.ndarray:
        """Real zonal/sectoral harmonic of degree ``ell`` (cos(m phi) type), unit-free."""
        if not 0 <= m <= ell <= self.lmax:
            raise GeometryError(f"harmonic (l={ell}, m={m}) not resolved (lmax={self.lmax})")
        p = self._legendre[m, ell][:, None]
        return p * np.cos(m * self.phi)


def make_sphere_backend(n_theta: int, n_phi: int) -> SphereBackend:
    """Gauss-Legendre x trapezoid grid on CP^1 with area-1 Fubini-Study form.

    The spectral truncation is triangular, ``lmax = min(n_theta - 1, (n_phi - 1) // 2)``,
    so that products of two resolved harmonics are integrated exactly.
    """
    if n_theta < 8 or n_phi < 16:
        raise GeometryError(f"sphere grid too small: n_theta={n_theta} (>=8), n_phi={n_phi} (>=16)")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    # north pole (z = 0) first
    order = np.argsort(-x)
    x, w = x[order], w[order]
    theta1 = np.arccos(x)
    phi1 = 2.0 * np.pi * np.arange(n_phi) / n_phi
    theta, phi = np.meshgrid(theta1, phi1, indexing="ij")
    weights = np.repeat((w / (2.0 * n_phi))[:, None], n_phi, axis=1)
    lmax = min(n_theta - 1, (n_phi - 1) // 2)
    geom = SphereBackend(
        kind=Kind.SPHERE, shape=(n_theta, n_phi), weights=weights,
        theta=theta, phi=phi, lmax=lmax,
    )
    object.__setattr__(geom, "_lap_mats", geom._multiplier_mats(lambda lam: -lam))
    return geom


@dataclass(frozen=True, eq=False)
class TorusBackend(GeometryBackend):
    """Flat torus R^2 / 2 pi Z^2, reference form of total area 1."""

    x: np.ndarray = field(default=None, repr=False)
    y: np.ndarray = field(default=None, repr=False)

    @functools.cached_property
    def _eigenvalues(self):
        nx, ny = self.shape
        kx = np.fft.fftfreq(nx, d=1.0 / nx)
        ky = np.fft.rfftfreq(ny, d=1.0 / ny)
        return kx[:, None] ** 2 + ky[None, :] ** 2

    @functools.cached_property
    def _neg_eigenvalues(self):
        return -self._eigenvalues

    @property
    def eigenvalue_max(self) -> float:
        return float(self._eigenvalues.max())

    def spectral_multiply(self, f, multiplier) -> np.ndarray:
        fh = scipy.fft.rfft2(np.asarray(f, dtype=float))
        fh *= multiplier(self._eigenvalues)
        return scipy.fft.irfft2(fh, s=self.shape, overwrite_x=True)

    def laplacian(self, f) -> np.ndarray:
        fh = scipy.fft.rfft2(f)
        fh *= self._neg_eigenvalues
        return scipy.fft.irfft2(fh, s=self.shape, overwrite_x=True)


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def make_torus_backend(n_x: int, n_y: int) -> TorusBackend:
    if not (_is_pow2(n_x) and _is_pow2(n_y)) or min(n_x, n_y) < 16:
        raise GeometryError(f"torus grid sizes must be powers of two >= 16, got {n_x}x{n_y}")
    x1 = 2.0 * np.pi * np.arange(n_x) / n_x
    y1 = 2.0 * np.pi * np.arange(n_y) / n_y
    x, y = np.meshgrid(x1, y1, indexing="ij")
    weights = np.full((n_x, n_y), VOL / (n_x * n_y))
    return TorusBackend(kind=Kind.TORUS, shape=(n_x, n_y), weights=weights, x=x, y=y)


def ma_density(geom: GeometryBackend, phi, check: bool = True) -> np.ndarray:
    """Monge-Ampere density ``u = omega_phi / omega_ref = 1 + Delta(phi) / 2``.

    Raises
    ------
    PositivityError
        If ``check`` and ``u <= 0`` at some node.  The offending node indices
        are attached to the exception; nothing is clamped.
    """
    u = 1.0 + 0.5 * geom.laplacian(phi)
    if check and not np.all(u > 0):
        bad = np.argwhere(~(u > 0))
        raise PositivityError(
            f"Kahler positivity lost at {len(bad)} node(s), min u = {u.min():.3e}", nodes=bad
        )
    return u


def normalize_density(geom: GeometryBackend, f) -> np.ndarray:
    """Scale a positive density so that it integrates to ``VOL``."""
    f = np.asarray(f, dtype=float)
    if f.shape != geom.shape:
        raise GeometryError(f"density shape {f.shape} does not match grid {geom.shape}")
    if not np.all(f > 0):
        raise GeometryError("volume density must be strictly positive")
    return f * (VOL / geom.integrate(f))


def check_volume_density(geom: GeometryBackend, f, tol: float = 1e-10) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != geom.shape:
        raise GeometryError(f"density shape {f.shape} does not match grid {geom.shape}")
    if not np.all(f > 0):
        raise GeometryError("volume density must be strictly positive")
    mass = geom.integrate(f)
    if abs(mass - VOL) > tol:
        raise GeometryError(f"volume density has mass {mass!r}, expected {VOL}")
    return f


# --------------------------------------------------------------------------
# holomorphic sections of O(k) on CP^1


def section_log_magnitude(k: int, theta) -> np.ndarray:
    """``log |e_j|_ref`` for the monomials ``e_j = z^j``, shape ``theta.shape + (k+1,)``.

    With ``z = tan(theta/2) e^{i phi}`` and reference weight ``(1+|z|^2)^{-k}``,
    ``|e_j|_ref = sin(theta/2)^j cos(theta/2)^(k-j)``; evaluating both factors
    in log form handles both charts (j <-> k-j) without underflow.
    """
    theta = np.asarray(theta, dtype=float)[..., None]
    j = np.arange(k + 1)
    return xlogy(j, np.sin(theta / 2)) + xlogy(k - j, np.cos(theta / 2))


def log_binomial_scale(k: int) -> np.ndarray:
    """``log sqrt((k+1) C(k, j))``: the factor making the monomials SU(2)-orthonormal."""
    j = np.arange(k + 1)
    return 0.5 * (np.log(k + 1.0) + gammaln(k + 1.0) - gammaln(j + 1.0) - gammaln(k - j + 1.0))


@dataclass(frozen=True, eq=False)
class SectionBasis:
    """Monomial basis of H^0(O(k)) evaluated on a sphere grid.

    ``log_mag`` and ``phase`` hold the reference-weighted values of the
    monomials at every node (flattened, shape ``(n_nodes, k+1)``).  Matrix
    computations use the rescaled values ``values = exp(scale) * monomial`` so
    that the round metric becomes the identity; ``scale`` converts between the
    two (``H_monomial = diag(exp(-scale)) H_scaled diag(exp(-scale))``).
    """

    geom: SphereBackend
    k: int
    log_mag: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.k + 1

    @functools.cached_property
    def values(self) -> np.ndarray:
        """Rescaled section values, complex ``(n_nodes, k+1)``."""
        return np.exp(self.log_mag + self.scale) * np.exp(1j * self.phase)

    def monomial_values(self) -> np.ndarray:
        return np.exp(self.log_mag) * np.exp(1j * self.phase)

    def pointwise_gram(self, node: int) -> np.ndarray:
        """``<e_i, e_j>_ref`` at one node (monomial basis)."""
        v = self.monomial_values()[node]
        return np.outer(v, v.conj())

    @property
    def weights(self) -> np.ndarray:
        return self.geom.weights.reshape(-1)


def make_section_basis(geom: GeometryBackend, k: int) -> SectionBasis:
    if geom.kind is not Kind.SPHERE:
        raise GeometryError("holomorphic sections are only available on the sphere backend")
    if not 1 <= k <= 64:
        raise GeometryError(f"line bundle power k={k} outside supported range 1..64")
    theta = geom.theta.reshape(-1)
    phi = geom.phi.reshape(-1)
    log_mag = section_log_magnitude(k, theta)
    phase = np.outer(phi, np.arange(k + 1))
    if not np.all(np.isfinite(np.exp(log_mag + log_binomial_scale(k)))):
        raise GeometryError("section values overflow on this grid")
    return SectionBasis(geom=geom, k=k, log_mag=log_mag, phase=phase, scale=log_binomial_scale(k))


def section_values_at(k: int, theta, phi) -> np.ndarray:
    """Reference-weighted monomial values at arbitrary points (poles allowed)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    lm = section_log_magnitude(k, theta)
    return np.exp(lm) * np.exp(1j * np.multiply.outer(phi, np.arange(k + 1)))
