"""Experiment configuration, reproduction pipelines, trace persistence and CLI."""

from .config import COMMANDS, ConfigError, ExperimentConfig, default_config, load, parse
from .pipelines import (
    cmd_balanced,
    cmd_bergman_asymptotics,
    cmd_calabi,
    cmd_quantization,
    run_command,
)
from .traces import FlowTrace, read_trace

__all__ = [
    "COMMANDS", "ConfigError", "ExperimentConfig", "FlowTrace", "cmd_balanced",
    "cmd_bergman_asymptotics", "cmd_calabi", "cmd_quantization", "default_config",
    "load", "parse", "read_trace", "run_command",
]
