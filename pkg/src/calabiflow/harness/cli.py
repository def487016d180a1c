"""Command-line entry point: ``calabiflow <command> [--config PATH] [--out DIR] [--seed N] [--threads N]``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.  Traces
written before a failure stay on disk with their manifest marked ``failed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from ..flows_finite import FlowError
from ..flows_pde import StepUnderflowError
from ..geometry import GeometryError, PositivityError
from ..quantization import QuantizationError
from .config import COMMANDS, ConfigError, default_config, load, shipped_configs
from .pipelines import run_command

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

NUMERICAL_ERRORS = (PositivityError, QuantizationError, FlowError, StepUnderflowError,
                    FloatingPointError, np.linalg.LinAlgError)

logger = logging.getLogger("calabiflow")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calabiflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", help="JSON config file or shipped config name "
                       f"({', '.join(shipped_configs())}); default: the shipped {name} config")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="concurrent per-k runs (default 1)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load(args.config) if args.config else default_config(args.command)
        if cfg.command != args.command:
            raise ConfigError("command", f"config is for {cfg.command!r}, not {args.command!r}")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        cfg = cfg.with_overrides(output=args.out, seed=args.seed)
    except (ConfigError, GeometryError) as exc:
        key = getattr(exc, "key", "geometry")
        print(json.dumps({"error": "config", "key": key, "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            summary = run_command(cfg, threads=args.threads)
    except NUMERICAL_ERRORS as exc:
        info = {"error": "numerical", "type": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "time", None) is not None:
            info["time"] = exc.time
        print(json.dumps(info), file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({"output": cfg.output, "run_id": summary["run_id"]}))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
