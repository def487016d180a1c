"""The four reproduction pipelines.

Each ``cmd_*`` takes a resolved :class:`ExperimentConfig`, writes its traces
and tables under ``config.output`` and returns a JSON-serialisable summary
(also written to ``summary.json``).  Per-k work runs on a thread pool; every
task owns its output files and results are gathered in k order, so the
output does not depend on scheduling.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__
from ..flows_finite import FlowControls, bergman_start, flow_density, run_balancing_flow
from ..flows_pde import (
    TRACE_COLUMNS,
    PdeControls,
    run_omega_kahler_flow,
    spectral_solve_linear,
    v_normalize,
)
from ..functionals import aubin_I, aubin_J
from ..geometry import Kind, make_section_basis, ma_density
from ..moment import dist_flat, dist_geodesic
from ..quantization import (
    Weighting,
    balancing_potential,
    bergman_density,
    bergman_inner_product,
    berezin_qk,
    fs,
    iterate_tk,
    normalize_scale,
    random_inner_product,
    reference_metric,
)
from .config import TEST_FUNCTIONS, ExperimentConfig
from .traces import FlowTrace, write_json

logger = logging.getLogger(__name__)


class _Run:
    """Shared bookkeeping: output directory, run id and trace factory."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out = Path(config.output)
        self.out.mkdir(parents=True, exist_ok=True)
        self.run_id = f"{config.command}-{config.config_hash[:12]}"
        (self.out / "config.json").write_text(config.canonical())

    def trace(self, name, columns, **extra):
        return FlowTrace(self.out / f"{name}.csv", columns, self.run_id,
                         self.config.config_hash, __version__, extra)

    def finish(self, summary):
        summary = {"run_id": self.run_id, "config_hash": self.config.config_hash,
                   "code_version": __version__, **summary}
        write_json(self.out / "summary.json", summary)
        return summary


def _map_k(fn, ks, threads):
    if threads <= 1 or len(ks) == 1:
        return [fn(k) for k in ks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ks))


def loglog_slope(ks, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(k)``."""
    ks = np.asarray(ks, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(ks) < 2 or np.any(errors <= 0):
        return float("nan")
    return float(np.polyfit(np.log(ks), np.log(errors), 1)[0])


def _in_band(slope, band):
    return bool(band[0] <= slope <= band[1])


def _save_field(path, geom, field):
    np.savetxt(path, np.asarray(field), fmt="%.17g", delimiter=",")


# --------------------------------------------------------------------------
# balanced


def cmd_balanced(config: ExperimentConfig, threads: int = 1) -> dict:
    run = _Run(config)
    p = config.params
    geom = config.geometry.build()
    omega = config.omega.density(geom)

    def one(k):
        t_start = time.perf_counter()
        basis = make_section_basis(geom, k)
        with run.trace(f"balanced_k{k}_tk", ["iteration", "mu0_hs"], k=k) as tr:
            res = iterate_tk(basis, omega, tol=p["tk_tol"], max_iter=p["tk_max_iter"])
            for i, v in enumerate(res.history):
                tr.append((i, v))
        t_tk = time.perf_counter() - t_start
        # seeded random starts: FS potentials must agree up to a constant
        potentials = []
        start_iters = []
        for i in range(p["random_starts"]):
            rng = np.random.default_rng([config.seed, k, i])
            H0 = random_inner_product(basis, rng, p["random_spread"])
            r = iterate_tk(basis, omega, H0=H0, tol=p["tk_tol"], max_iter=p["tk_max_iter"])
            start_iters.append(r.iterations)
            potentials.append(fs(basis, r.H).potential)
        diffs = [potentials[0] - q for q in potentials[1:]]
        agreement = max(float(np.ptp(d)) for d in diffs)

        controls = FlowControls(tol=p["flow_tol"], dt=p["flow_dt"], dt_max=p["flow_dt_max"],
                                max_steps=p["flow_max_steps"], increase_factor=p["increase_factor"])
        t0 = time.perf_counter()
        with run.trace(f"balanced_k{k}_flow", ["t", "dt", "mu0_hs", "mu_op"], k=k) as tr:
            flow = run_balancing_flow(bergman_start(basis, omega), basis, omega, controls, on_row=tr)
        t_flow = time.perf_counter() - t0
        H_flow = normalize_scale(basis, flow.state.inner_product(basis))
        psi = fs(basis, res.H).potential
        density = ma_density(geom, psi)
        _save_field(run.out / f"balanced_k{k}_density.csv", geom, density)
        return {
            "k": k,
            "tk_iterations": res.iterations,
            "tk_converged": res.converged,
            "tk_mu0_hs": res.mu0_norm,
            "tk_seconds": t_tk,
            "random_start_iterations": start_iters,
            "random_start_sup_difference": agreement,
            "flow_converged": flow.converged,
            "flow_time": flow.state.t,
            "flow_steps": len(flow.rows) - 1,
            "flow_rejected": flow.rejected,
            "flow_mu0_hs": flow.state.mu0_norm,
            "flow_seconds": t_flow,
            "flow_vs_tk_geodesic": dist_geodesic(res.H, H_flow, k=1, basis=basis),
            "flow_vs_tk_projective": dist_geodesic(res.H, H_flow, k=1, basis=basis, projective=True),
            "density_residual": float(np.abs(density / omega - 1.0).max()),
        }

    per_k = _map_k(one, config.k, threads)
    return run.finish({"command": "balanced", "per_k": per_k})


# --------------------------------------------------------------------------
# bergman-asymptotics


def cmd_bergman_asymptotics(config: ExperimentConfig, threads: int = 1) -> dict:
    run = _Run(config)
    p = config.params
    geom = config.geometry.build()
    omega = config.omega.density(geom)
    ones = np.ones(geom.shape)
    names = p["test_functions"]
    tests = [TEST_FUNCTIONS[n](geom) for n in names]

    def one(k):
        basis = make_section_basis(geom, k)
        h = reference_metric(basis)
        u = h.kahler_density(geom)
        rho = bergman_density(basis, h, Weighting.GIVEN, omega)
        rho_err = float(np.abs(rho / k - u / omega).max())
        q_err = [float(np.abs(berezin_qk(basis, h, ones, g) - g).max()) for g in tests]
        H = bergman_inner_product(basis, h.potential, omega)
        beta = balancing_potential(basis, H, omega)
        beta_err = float(np.abs(beta - (1.0 - omega / u)).max())
        return (k, rho_err, *q_err, beta_err)

    rows = _map_k(one, config.k, threads)
    columns = ["k", "rho_error"] + [f"qk_error_{n}" for n in names] + ["beta_error"]
    with run.trace("bergman_asymptotics", columns) as tr:
        for r in rows:
            tr.append(r)
    ks = [r[0] for r in rows]
    band = p["slope_band"]
    slopes = {c: loglog_slope(ks, [r[i] for r in rows]) for i, c in enumerate(columns) if i > 0}
    beta = [r[-1] for r in rows]
    summary = {
        "command": "bergman-asymptotics",
        "k": ks,
        "table": {c: [r[i] for r in rows] for i, c in enumerate(columns) if i > 0},
        "slopes": slopes,
        "slope_band": band,
        "slopes_in_band": {c: _in_band(s, band) for c, s in slopes.items()},
        "beta_monotone": bool(np.all(np.diff(beta) < 0)),
    }
    return run.finish(summary)


# --------------------------------------------------------------------------
# quantization


def cmd_quantization(config: ExperimentConfig, threads: int = 1) -> dict:
    run = _Run(config)
    p = config.params
    geom = config.geometry.build()
    omega = config.omega.density(geom)
    times = tuple(p["sample_times"])
    t_end = times[-1]

    t0 = time.perf_counter()
    controls = PdeControls(t_max=t_end, tol=0.0, safety=p["pde_safety"], record_every=10,
                           snapshot_times=times)
    with run.trace("quantization_pde", TRACE_COLUMNS) as tr:
        pde = run_omega_kahler_flow(geom, omega, controls, on_row=tr)
    t_pde = time.perf_counter() - t0
    snaps = pde.snapshots

    def one(k):
        basis = make_section_basis(geom, k)
        fc = FlowControls(t_end=t_end, dt=p["dt"], adaptive=False, snapshot_times=times, order=p["order"])
        with run.trace(f"quantization_k{k}_flow", ["t", "dt", "mu0_hs", "mu_op"], k=k) as tr:
            flow = run_balancing_flow(bergman_start(basis, omega), basis, omega, fc, on_row=tr)
        out = {"k": k}
        for t in times:
            uk = flow_density(basis, flow.snapshots[t])
            out[f"sup_density_error_t{t:g}"] = float(np.abs(uk - snaps[t].u).max())
            # distance of the flow from the Bergman path of the PDE solution
            H_flow = flow.forms[t]
            H_path = bergman_inner_product(basis, snaps[t].phi, omega)
            out[f"d_flat_t{t:g}"] = dist_flat(H_flow, H_path, k=k)
            out[f"d_geodesic_t{t:g}"] = dist_geodesic(H_flow, H_path, k=k, basis=basis, projective=True)
        return out

    per_k = _map_k(one, config.k, threads)
    err_cols = [f"sup_density_error_t{t:g}" for t in times]
    dist_cols = [c for t in times for c in (f"d_flat_t{t:g}", f"d_geodesic_t{t:g}")]
    with run.trace("quantization_errors", ["k"] + err_cols + dist_cols) as tr:
        for r in per_k:
            tr.append([r["k"]] + [r[c] for c in err_cols + dist_cols])
    fit_col = f"sup_density_error_t{p['fit_time']:g}"
    errs = [r[fit_col] for r in per_k]
    slope = loglog_slope(config.k, errs)
    summary = {
        "command": "quantization",
        "k": list(config.k),
        "pde_seconds": t_pde,
        "pde_steps": pde.steps,
        "per_k": per_k,
        "fit_time": p["fit_time"],
        "fit_errors": errs,
        "slope": slope,
        "slope_band": p["slope_band"],
        "slope_in_band": _in_band(slope, p["slope_band"]),
        "strictly_decreasing": bool(np.all(np.diff(errs) < 0)),
    }
    return run.finish(summary)


# --------------------------------------------------------------------------
# calabi


def second_differences(times, values) -> np.ndarray:
    """Second differences rescaled to a uniform step: ``h^2 * f''`` with ``h`` the local mean step."""
    t = np.asarray(times, dtype=float)
    f = np.asarray(values, dtype=float)
    if len(t) < 3:
        return np.zeros(0)
    h1 = np.diff(t)[:-1]
    h2 = np.diff(t)[1:]
    d1 = (f[1:-1] - f[:-2]) / h1
    d2 = (f[2:] - f[1:-1]) / h2
    curv = 2.0 * (d2 - d1) / (h1 + h2)
    return curv * (0.5 * (h1 + h2)) ** 2


def exponential_tail_rate(times, energy, fraction=0.5) -> float:
    """Decay rate from a log-linear fit over the last ``fraction`` of a trace (reported only)."""
    t = np.asarray(times, dtype=float)
    e = np.asarray(energy, dtype=float)
    keep = (t >= t[0] + (1 - fraction) * (t[-1] - t[0])) & (e > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(-np.polyfit(t[keep], np.log(e[keep]), 1)[0])


def cmd_calabi(config: ExperimentConfig, threads: int = 1) -> dict:
    run = _Run(config)
    p = config.params
    geom = config.geometry.build()
    omega = config.omega.density(geom)
    controls = PdeControls(t_max=p["t_max"], tol=p["tol"], safety=p["safety"], record_every=p["record_every"])
    t0 = time.perf_counter()
    with run.trace("calabi_flow", TRACE_COLUMNS) as tr:
        res = run_omega_kahler_flow(geom, omega, controls, on_row=tr)
    seconds = time.perf_counter() - t0
    state = res.state
    oracle = spectral_solve_linear(geom, omega)
    v = v_normalize(geom, state.phi)
    f0 = res.f0_values
    scale = max(float(np.abs(f0 - f0[-1]).max()), np.finfo(float).tiny)
    sd = second_differences(res.f0_times, f0)[p["convexity_skip"]:]
    cols = res.columns
    rows = np.array(res.rows)
    i_val = aubin_I(geom, state.phi, u=state.u)
    j_val = aubin_J(geom, state.phi)
    _save_field(run.out / "calabi_potential.csv", geom, v)
    summary = {
        "command": "calabi",
        "geometry": config.geometry.kind,
        "converged": res.converged,
        "steps": res.steps,
        "t_final": state.t,
        "seconds": seconds,
        "phidot_sup": float(np.abs(state.phidot).max()),
        "ma_residual": float(np.abs(state.u - omega).max()),
        "oracle_sup_error": float(np.abs(v - oracle).max()),
        "max_principle_violation": res.max_principle_violation,
        "f0_max_increase": res.f0_increase,
        "f0_final": float(f0[-1]),
        "f0_final_is_min": bool(f0[-1] <= f0.min() + 1e-12 * scale),
        "convexity_min_second_difference": float(sd.min()) if sd.size else 0.0,
        "convexity_scale": scale,
        "oscillation_decay_rate": exponential_tail_rate(rows[:, 0], rows[:, cols.index("oscillation_energy")]),
        "I_final": i_val,
        "J_final": j_val,
        "I_minus_2J_relative": abs(i_val - 2 * j_val) / max(abs(i_val), np.finfo(float).tiny),
    }
    if p["endgame"] and geom.kind is Kind.SPHERE:
        def one(k):
            basis = make_section_basis(geom, k)
            r = iterate_tk(basis, omega, tol=p["endgame_tol"])
            uk = ma_density(geom, fs(basis, r.H).potential)
            return (k, float(np.abs(uk / omega - 1.0).max()), r.mu0_norm)

        rows_k = _map_k(one, config.k, threads)
        with run.trace("calabi_endgame", ["k", "ma_ratio_error", "mu0_hs"]) as tr:
            for r in rows_k:
                tr.append(r)
        errs = [r[1] for r in rows_k]
        summary["endgame"] = {"k": list(config.k), "ma_ratio_error": errs,
                              "decreasing": bool(np.all(np.diff(errs) < 0))}
    return run.finish(summary)


COMMAND_FUNCS = {
    "balanced": cmd_balanced,
    "bergman-asymptotics": cmd_bergman_asymptotics,
    "quantization": cmd_quantization,
    "calabi": cmd_calabi,
}


def run_command(config: ExperimentConfig, threads: int = 1) -> dict:
    return COMMAND_FUNCS[config.command](config, threads=threads)


__all__ = ["cmd_balanced", "cmd_bergman_asymptotics", "cmd_quantization", "cmd_calabi",
           "run_command", "loglog_slope", "second_differences"]
