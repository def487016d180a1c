"""Aubin's energy functionals and F0_Omega on a complex curve (n = 1), Vol = 1.

For a reference density ``u0`` (the reference Kahler form, 1 for omega_ref) and
potential ``phi`` with ``u = u0 + Delta(phi)/2``::

    I(phi)  = int phi (u0 - u)
    J(phi)  = int_0^1 I(s phi) / s ds
    F0(phi) = J(phi) + int phi (f - u0)

At n = 1 the integrand ``I(s phi)/s`` is linear in ``s`` and the two-point
Gauss-Legendre rule evaluates ``J`` exactly.  The Dirichlet form
``int i d phi ^ dbar phi`` is conformally invariant on a curve, so the same
Laplacian serves any reference form in the class.
"""

from __future__ import annotations

import numpy as np

_S_NODES, _S_WEIGHTS = np.polynomial.legendre.leggauss(2)
_S_NODES = 0.5 * (_S_NODES + 1.0)
_S_WEIGHTS = 0.5 * _S_WEIGHTS


def _density(geom, phi, ref):
    return ref + 0.5 * geom.laplacian(phi)


def aubin_I(geom, phi, ref=1.0, u=None) -> float:
    if u is None:
        u = _density(geom, phi, ref)
    return geom.integrate(phi * (ref - u))


def aubin_J(geom, phi, ref=1.0) -> float:
    total = 0.0
    for s, w in zip(_S_NODES, _S_WEIGHTS):
        total += w * aubin_I(geom, s * phi, ref) / s
    return total


def f0_omega(geom, f, phi, ref=1.0) -> float:
    """``F0_Omega(omega_ref_form, omega_phi)`` with ``ref`` the density of the reference form."""
    return aubin_J(geom, phi, ref) + geom.integrate(phi * (f - ref))


def f0_derivative(geom, f, phi, phidot) -> float:
    """``d/dt F0 = int phidot (f - u)`` along a path with velocity ``phidot``."""
    u = _density(geom, phi, 1.0)
    return geom.integrate(phidot * (f - u))


def f0_flow_derivative(geom, f, phi) -> float:
    """``-int (u - f)^2 / u``: the value of d/dt F0 along the Omega-Kahler flow."""
    u = _density(geom, phi, 1.0)
    return -geom.integrate((u - f) ** 2 / u)


def cocycle_check(geom, f, phi1, phi2) -> float:
    """``|F0(w, w_1) - F0(w, w_2) - F0(w_2, w_1)|`` with ``w_2`` as reference in the last term."""
    lhs = f0_omega(geom, f, phi1)
    u2 = _density(geom, phi2, 1.0)
    rhs = f0_omega(geom, f, phi2) + f0_omega(geom, f, phi1 - phi2, ref=u2)
    return abs(lhs - rhs)
