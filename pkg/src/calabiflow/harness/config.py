"""Experiment configuration: JSON text in, validated dataclasses out.

A config is a JSON object::

    {
      "command": "balanced",
      "geometry": {"kind": "sphere", "grid": [48, 96]},
      "omega": {"family": "one_plus_cos", "a": 0.3},
      "k": [8],
      "seed": 0,
      "output": "runs/balanced",
      "params": {...command specific, see COMMAND_DEFAULTS...}
    }

Missing ``params`` entries are filled from ``COMMAND_DEFAULTS``; unknown keys
anywhere are rejected.  ``canonical()`` re-serialises the fully resolved
config with sorted keys, so ``parse(canonical(parse(text)))`` is a fixed point,
and ``config_hash`` is the sha256 of that text with ``output`` removed (the
output location does not change any number that is computed).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..geometry import Kind, make_sphere_backend, make_torus_backend, normalize_density

COMMANDS = ("balanced", "bergman-asymptotics", "quantization", "calabi")

COMMAND_DEFAULTS = {
    "balanced": {
        "tk_tol": 1e-12,
        "tk_max_iter": 500,
        "random_starts": 2,
        "random_spread": 1.0,
        "flow_tol": 1e-12,
        "flow_dt": 0.05,
        "flow_dt_max": 2.0,
        "flow_max_steps": 20000,
        "increase_factor": 1.0 + 1e-6,
    },
    "bergman-asymptotics": {
        "test_functions": ["cos", "exp_half_cos", "mixed"],
        "slope_band": [-1.4, -0.6],
    },
    "quantization": {
        "sample_times": [0.1, 0.2, 0.3],
        "fit_time": 0.3,
        "dt": 5e-4,
        "order": 2,
        "pde_safety": 0.4,
        "slope_band": [-1.6, -0.6],
    },
    "calabi": {
        "tol": 1e-8,
        "t_max": 50.0,
        "safety": 0.7,
        "record_every": 50,
        "convexity_skip": 10,
        "endgame": False,
        "endgame_tol": 1e-10,
    },
}

SPHERE_FAMILIES = {"reference": (), "one_plus_cos": ("a",), "exp_cos": ("a",)}
TORUS_FAMILIES = {"reference": (), "exp_sin_cos": ("a", "b"), "trig_poly": ("c0", "terms")}

_TOP_KEYS = {"command", "geometry", "omega", "k", "seed", "output", "params"}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class GeometrySpec:
    kind: str
    grid: tuple

    def build(self):
        if self.kind == Kind.SPHERE.value:
            return make_sphere_backend(*self.grid)
        return make_torus_backend(*self.grid)

    def to_dict(self):
        return {"kind": self.kind, "grid": list(self.grid)}


@dataclass(frozen=True)
class OmegaSpec:
    family: str
    params: dict = field(default_factory=dict)

    def density(self, geom) -> np.ndarray:
        """The volume density on ``geom``, normalised to total mass Vol."""
        p = self.params
        if self.family == "reference":
            raw = np.ones(geom.shape)
        elif self.family == "one_plus_cos":
            raw = 1.0 + p["a"] * np.cos(geom.theta)
        elif self.family == "exp_cos":
            raw = np.exp(p["a"] * np.cos(geom.theta))
        elif self.family == "exp_sin_cos":
            raw = np.exp(p["a"] * np.sin(geom.x) + p["b"] * np.cos(geom.y))
        elif self.family == "trig_poly":
            raw = np.full(geom.shape, float(p["c0"]))
            for px, py, ca, sa in p["terms"]:
                arg = px * geom.x + py * geom.y
                raw = raw + ca * np.cos(arg) + sa * np.sin(arg)
        else:  # pragma: no cover - rejected at parse time
            raise ConfigError("omega.family", f"unknown family {self.family!r}")
        if not np.all(raw > 0):
            raise ConfigError("omega", f"density is not strictly positive (min {raw.min():.3e})")
        return normalize_density(geom, raw)

    def to_dict(self):
        return {"family": self.family, **copy.deepcopy(self.params)}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    geometry: GeometrySpec
    omega: OmegaSpec
    k: tuple
    seed: int
    output: str
    params: dict

    def to_dict(self, with_output: bool = True) -> dict:
        d = {
            "command": self.command,
            "geometry": self.geometry.to_dict(),
            "omega": self.omega.to_dict(),
            "k": list(self.k),
            "seed": self.seed,
            "params": copy.deepcopy(self.params),
        }
        if with_output:
            d["output"] = self.output
        return d

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(with_output=False), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, output=None, seed=None) -> "ExperimentConfig":
        d = self.to_dict()
        if output is not None:
            d["output"] = str(output)
        if seed is not None:
            d["seed"] = seed
        return from_dict(d)


# --------------------------------------------------------------------------
# parsing


def _number(value, key, integer=False, positive=False, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer and not (isinstance(value, int) or float(value).is_integer()):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(key, "must be finite")
    if positive and value <= 0:
        raise ConfigError(key, "must be positive")
    if lo is not None and value < lo:
        raise ConfigError(key, f"must be >= {lo}")
    if hi is not None and value > hi:
        raise ConfigError(key, f"must be <= {hi}")
    return int(value) if integer else float(value)


def _check_keys(d, allowed, prefix, required=()):
    if not isinstance(d, dict):
        raise ConfigError(prefix or "<root>", "expected an object")
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{prefix}.{key}" if prefix else key, "unknown key")
    for key in required:
        if key not in d:
            raise ConfigError(f"{prefix}.{key}" if prefix else key, "missing required key")


def _parse_geometry(d):
    _check_keys(d, {"kind", "grid"}, "geometry", required=("kind", "grid"))
    kind = d["kind"]
    if kind not in (Kind.SPHERE.value, Kind.TORUS.value):
        raise ConfigError("geometry.kind", f"expected 'sphere' or 'torus', got {kind!r}")
    grid = d["grid"]
    if not isinstance(grid, list) or len(grid) != 2:
        raise ConfigError("geometry.grid", "expected two grid sizes")
    grid = tuple(_number(g, "geometry.grid", integer=True, positive=True) for g in grid)
    spec = GeometrySpec(kind, grid)
    try:
        spec.build()
    except ValueError as exc:
        raise ConfigError("geometry.grid", str(exc)) from None
    return spec


def _parse_omega(d, kind):
    families = SPHERE_FAMILIES if kind == Kind.SPHERE.value else TORUS_FAMILIES
    if not isinstance(d, dict) or "family" not in d:
        raise ConfigError("omega.family", "missing required key")
    fam = d["family"]
    if fam not in families:
        raise ConfigError("omega.family", f"{fam!r} is not available on the {kind}; choose from {sorted(families)}")
    _check_keys(d, {"family", *families[fam]}, "omega", required=families[fam])
    params = {}
    for key in families[fam]:
        if key == "terms":
            terms = d["terms"]
            if not isinstance(terms, list):
                raise ConfigError("omega.terms", "expected a list of [p, q, cos_coef, sin_coef]")
            parsed = []
            for i, t in enumerate(terms):
                if not isinstance(t, list) or len(t) != 4:
                    raise ConfigError(f"omega.terms[{i}]", "expected [p, q, cos_coef, sin_coef]")
                parsed.append([_number(t[0], f"omega.terms[{i}]", integer=True),
                               _number(t[1], f"omega.terms[{i}]", integer=True),
                               _number(t[2], f"omega.terms[{i}]"), _number(t[3], f"omega.terms[{i}]")])
            params["terms"] = parsed
        else:
            params[key] = _number(d[key], f"omega.{key}")
    if fam == "one_plus_cos" and abs(params["a"]) >= 1:
        raise ConfigError("omega.a", "1 + a cos(theta) is positive only for |a| < 1")
    return OmegaSpec(fam, params)


def _parse_params(command, d):
    defaults = COMMAND_DEFAULTS[command]
    d = {} if d is None else d
    _check_keys(d, set(defaults), "params")
    out = copy.deepcopy(defaults)
    for key, value in d.items():
        ref = defaults[key]
        path = f"params.{key}"
        if isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ConfigError(path, "expected true or false")
            out[key] = value
        elif isinstance(ref, int):
            out[key] = _number(value, path, integer=True, lo=0)
        elif isinstance(ref, float):
            out[key] = _number(value, path, positive=True)
        elif key == "test_functions":
            if not isinstance(value, list) or not value or any(v not in TEST_FUNCTIONS for v in value):
                raise ConfigError(path, f"expected a non-empty list drawn from {sorted(TEST_FUNCTIONS)}")
            out[key] = list(value)
        elif key in ("slope_band",):
            if not isinstance(value, list) or len(value) != 2:
                raise ConfigError(path, "expected [low, high]")
            lo, hi = (_number(v, path) for v in value)
            if lo >= hi:
                raise ConfigError(path, "low must be below high")
            out[key] = [lo, hi]
        elif key == "sample_times":
            if not isinstance(value, list) or not value:
                raise ConfigError(path, "expected a non-empty list of times")
            times = sorted(_number(v, path, positive=True) for v in value)
            out[key] = times
        else:  # pragma: no cover
            raise ConfigError(path, "unsupported parameter")
    if command == "quantization":
        if out["fit_time"] not in out["sample_times"]:
            raise ConfigError("params.fit_time", "must be one of sample_times")
        if out["order"] not in (1, 2):
            raise ConfigError("params.order", "must be 1 or 2")
    if command == "balanced" and out["random_starts"] < 2:
        raise ConfigError("params.random_starts", "at least two seeded starts are compared")
    return out


def from_dict(d: dict) -> ExperimentConfig:
    _check_keys(d, _TOP_KEYS, "", required=("command", "geometry", "omega", "k"))
    command = d["command"]
    if command not in COMMANDS:
        raise ConfigError("command", f"expected one of {COMMANDS}, got {command!r}")
    geometry = _parse_geometry(d["geometry"])
    omega = _parse_omega(d["omega"], geometry.kind)
    ks = d["k"]
    if isinstance(ks, int) and not isinstance(ks, bool):
        ks = [ks]
    if not isinstance(ks, list) or not ks:
        raise ConfigError("k", "expected an integer or a non-empty list")
    ks = tuple(_number(k, "k", integer=True, lo=1, hi=64) for k in ks)
    if len(set(ks)) != len(ks):
        raise ConfigError("k", "duplicate entries")
    ks = tuple(sorted(ks))
    seed = _number(d.get("seed", 0), "seed", integer=True, lo=0)
    output = d.get("output", f"runs/{command}")
    if not isinstance(output, str) or not output:
        raise ConfigError("output", "expected a directory path")
    params = _parse_params(command, d.get("params"))
    needs_sections = command != "calabi" or params["endgame"]
    if needs_sections and geometry.kind != Kind.SPHERE.value:
        raise ConfigError("geometry.kind", f"command {command!r} needs holomorphic sections, which only the sphere provides")
    cfg = ExperimentConfig(command, geometry, omega, ks, seed, output, params)
    cfg.omega.density(geometry.build())   # positivity check
    return cfg


def parse(text: str) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return from_dict(d)


def load(path) -> ExperimentConfig:
    """Read a config file, or a shipped default given by name (e.g. ``calabi_sphere``)."""
    name = str(path)
    if name in shipped_configs():
        return parse(resources.files("calabiflow.configs").joinpath(f"{name}.json").read_text())
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return parse(text)


def shipped_configs() -> list:
    root = resources.files("calabiflow.configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def default_config(command: str) -> ExperimentConfig:
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}")
    return load(command.replace("-", "_"))


# --------------------------------------------------------------------------
# test functions for the Berezin transform (sphere)


def _cos(geom):
    return np.cos(geom.theta)


def _exp_half_cos(geom):
    return np.exp(0.5 * np.cos(geom.theta))


def _mixed(geom):
    ct = np.cos(geom.theta)
    return np.sin(geom.theta) ** 2 * np.cos(2 * geom.phi) + 0.3 * ct ** 3


TEST_FUNCTIONS = {"cos": _cos, "exp_half_cos": _exp_half_cos, "mixed": _mixed}
