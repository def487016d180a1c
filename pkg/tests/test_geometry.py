import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import comb

from calabiflow.geometry import (
    GeometryError,
    Kind,
    PositivityError,
    check_volume_density,
    ma_density,
    make_section_basis,
    make_sphere_backend,
    make_torus_backend,
    normalize_density,
    section_values_at,
)

from .conftest import smooth_sphere_field, smooth_torus_field

# 1 / ((k+1) C(k, j)) for k = 8, frozen from exact rational arithmetic
BETA_K8 = [1 / 9, 1 / 72, 1 / 252, 1 / 504, 1 / 630, 1 / 504, 1 / 252, 1 / 72, 1 / 9]


def beta_integral_quad(k, j):
    """Area-1 round form is sin(theta) dtheta dphi / 4 pi; |z^j|^2 (1+|z|^2)^-k = sin^2j cos^2(k-j) of theta/2."""
    val, _ = integrate.quad(
        lambda t: np.sin(t / 2) ** (2 * j) * np.cos(t / 2) ** (2 * (k - j)) * np.sin(t) / 2.0,
        0.0, np.pi, epsabs=1e-15, epsrel=1e-13,
    )
    return val


def test_frozen_beta_values_match_quadrature_oracle():
    for j, frozen in enumerate(BETA_K8):
        assert beta_integral_quad(8, j) == pytest.approx(frozen, rel=1e-12)
        assert frozen == pytest.approx(1.0 / (9 * comb(8, j)), rel=1e-15)


class TestSphere:
    def test_volume_is_one(self):
        g = make_sphere_backend(32, 64)
        assert g.integrate(np.ones(g.shape)) == pytest.approx(1.0, abs=1e-12)
        assert np.all(g.weights > 0)
        assert g.kind is Kind.SPHERE

    def test_rejects_small_grids(self):
        with pytest.raises(GeometryError):
            make_sphere_backend(7, 64)
        with pytest.raises(GeometryError):
            make_sphere_backend(16, 15)

    def test_laplacian_kills_constants(self, sphere):
        assert np.abs(sphere.laplacian(np.full(sphere.shape, 3.7))).max() < 1e-10

    def test_zero_mean_field_integrates_to_zero(self):
        g = make_sphere_backend(32, 64)
        # cos^3 and sin^2 cos 2phi are both mean-free on the round sphere
        y = np.cos(g.theta) ** 3 + np.sin(g.theta) ** 2 * np.cos(2 * g.phi)
        assert abs(g.integrate(y)) < 1e-10

    @pytest.mark.parametrize("ell", [1, 2, 3, 5])
    def test_eigenvalues(self, sphere, ell):
        for m in range(ell + 1):
            y = sphere.harmonic(ell, m)
            assert np.abs(sphere.laplacian(y) + 2 * ell * (ell + 1) * y).max() < 1e-10 * max(1, np.abs(y).max())

    def test_cos_theta_eigenfunction(self, sphere):
        c = np.cos(sphere.theta)
        assert np.abs(sphere.laplacian(c) + 4 * c).max() < 1e-11

    def test_harmonics_integrate_exactly(self, sphere):
        for ell in range(1, sphere.lmax + 1, 3):
            assert abs(sphere.integrate(sphere.harmonic(ell, 0))) < 1e-10

    def test_inverse_laplacian(self, sphere):
        f = smooth_sphere_field(sphere, np.random.default_rng(1))
        back = sphere.laplacian(sphere.inverse_laplacian(f))
        assert np.abs(back - f).max() < 1e-11

    @given(st.integers(0, 2**31 - 1))
    def test_laplacian_mean_free(self, sphere, seed):
        f = np.random.default_rng(seed).standard_normal(sphere.shape)
        assert abs(sphere.integrate(sphere.laplacian(f))) < 1e-10


class TestTorus:
    def test_cos_x(self, torus):
        assert np.abs(torus.laplacian(np.cos(torus.x)) + np.cos(torus.x)).max() < 1e-12

    def test_volume_and_constants(self, torus):
        assert torus.integrate(np.ones(torus.shape)) == pytest.approx(1.0, abs=1e-14)
        assert np.abs(torus.laplacian(np.ones(torus.shape))).max() < 1e-12

    @pytest.mark.parametrize("shape", [(24, 32), (32, 8), (12, 12)])
    def test_rejects_bad_sizes(self, shape):
        with pytest.raises(GeometryError):
            make_torus_backend(*shape)

    def test_mixed_mode(self, torus):
        f = np.sin(2 * torus.x + 3 * torus.y)
        assert np.abs(torus.laplacian(f) + 13 * f).max() < 1e-11


class TestMaDensity:
    def test_zero_potential(self, sphere):
        assert np.all(ma_density(sphere, np.zeros(sphere.shape)) == 1.0)

    def test_torus_cos(self, torus):
        eps = 0.3
        u = ma_density(torus, eps * np.cos(torus.x))
        assert np.abs(u - (1 - eps / 2 * np.cos(torus.x))).max() < 1e-12

    def test_positivity_flagged(self, torus):
        with pytest.raises(PositivityError) as info:
            ma_density(torus, 5.0 * np.cos(torus.x))
        assert len(info.value.nodes) > 0

    @given(st.integers(0, 2**31 - 1))
    def test_mass_preserved_and_linear(self, sphere, seed):
        rng = np.random.default_rng(seed)
        a = smooth_sphere_field(sphere, rng)
        b = smooth_sphere_field(sphere, rng)
        ua, ub, uab = (ma_density(sphere, x, check=False) for x in (a, b, a + b))
        assert abs(sphere.integrate(ua) - 1.0) < 1e-10
        assert np.abs((uab - 1) - (ua - 1) - (ub - 1)).max() < 1e-12

    @given(st.integers(0, 2**31 - 1))
    def test_mass_preserved_torus(self, torus, seed):
        phi = smooth_torus_field(torus, np.random.default_rng(seed))
        assert abs(torus.integrate(ma_density(torus, phi, check=False)) - 1.0) < 1e-10


class TestDensities:
    def test_normalize(self, sphere):
        f = normalize_density(sphere, np.exp(np.cos(sphere.theta)))
        assert check_volume_density(sphere, f) is not None

    def test_rejects_nonpositive(self, sphere):
        with pytest.raises(GeometryError):
            normalize_density(sphere, np.cos(sphere.theta))

    def test_rejects_wrong_mass(self, sphere):
        with pytest.raises(GeometryError):
            check_volume_density(sphere, np.full(sphere.shape, 1.01))


class TestSections:
    def test_k1_size(self, sphere):
        assert make_section_basis(sphere, 1).size == 2

    def test_torus_unsupported(self, torus):
        with pytest.raises(GeometryError):
            make_section_basis(torus, 4)

    def test_range(self, sphere):
        with pytest.raises(GeometryError):
            make_section_basis(sphere, 65)

    def test_gram_at_origin(self):
        v = section_values_at(8, 0.0, 0.0)[0]
        gram = np.outer(v, v.conj())
        expected = np.zeros((9, 9))
        expected[0, 0] = 1.0
        assert np.abs(gram - expected).max() < 1e-15

    def test_beta_integrals(self, sphere):
        b = make_section_basis(sphere, 8)
        vals = b.monomial_values()
        diag = (b.weights[:, None] * np.abs(vals) ** 2).sum(axis=0)
        assert np.allclose(diag, BETA_K8, rtol=1e-12, atol=0)

    def test_monomials_orthogonal(self, sphere):
        b = make_section_basis(sphere, 8)
        v = b.monomial_values()
        gram = (v.T * b.weights) @ v.conj()
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).max() < 1e-15

    def test_finite_at_large_k(self):
        g = make_sphere_backend(80, 160)
        b = make_section_basis(g, 64)
        assert np.all(np.isfinite(b.values))
        assert np.all(np.isfinite(b.monomial_values()))

    @given(st.integers(0, 2**31 - 1))
    def test_pointwise_gram_psd(self, basis6, seed):
        rng = np.random.default_rng(seed)
        c = rng.standard_normal(7) + 1j * rng.standard_normal(7)
        node = int(rng.integers(basis6.geom.n_nodes))
        g = basis6.pointwise_gram(node)
        assert np.abs(g - g.conj().T).max() < 1e-15
        assert (c.conj() @ g @ c).real >= -1e-15

    def test_antipodal_symmetry(self):
        # j <-> k - j under theta -> pi - theta
        t = np.array([0.3, 1.1, 2.0])
        a = np.abs(section_values_at(5, t, 0.0))
        b = np.abs(section_values_at(5, np.pi - t, 0.0))
        assert np.allclose(a, b[:, ::-1], rtol=1e-14)
