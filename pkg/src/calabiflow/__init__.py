"""Balanced metrics, the balancing flow and its Kahler-flow limit on model surfaces.

Modules
-------
geometry      quadrature grids, spectral Laplacians, sections of O(k) on CP^1
quantization  Hilb_Omega, FS, T_k, Bergman density, Berezin transform
moment        moment map on the Bergman space, distances, derivative identities
flows_finite  the rescaled balancing flow
flows_pde     the Omega-Kahler flow and its negative-c1 variant
functionals   Aubin's I, J and the functional F0_Omega
harness       configs, pipelines, traces, CLI
"""

__version__ = "0.1.0"
