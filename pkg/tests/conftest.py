import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from calabiflow.geometry import make_section_basis, make_sphere_backend, make_torus_backend, normalize_density

settings.register_profile("ci", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def sphere():
    return make_sphere_backend(24, 48)


@pytest.fixture(scope="session")
def torus():
    return make_torus_backend(32, 32)


@pytest.fixture(scope="session")
def omega_cos(sphere):
    return normalize_density(sphere, 1.0 + 0.3 * np.cos(sphere.theta))


@pytest.fixture(scope="session")
def basis6(sphere):
    return make_section_basis(sphere, 6)


def smooth_sphere_field(geom, rng, amplitude=0.05, lmax=4):
    """Random band-limited real field with zero mean."""
    out = np.zeros(geom.shape)
    for ell in range(1, lmax + 1):
        for m in range(0, ell + 1):
            out += amplitude * rng.standard_normal() * geom.harmonic(ell, m) / (ell * ell)
    return out


def smooth_torus_field(geom, rng, amplitude=0.05, kmax=3):
    out = np.zeros(geom.shape)
    for p in range(0, kmax + 1):
        for q in range(-kmax, kmax + 1):
            if p == 0 and q <= 0:
                continue
            a, b = rng.standard_normal(2) * amplitude / (p * p + q * q)
            out += a * np.cos(p * geom.x + q * geom.y) + b * np.sin(p * geom.x + q * geom.y)
    return out
