"""Discrete-event simulator of a multi-node LLM accelerator with a W8A8 functional core."""

from .config import (ConfigError, Flags, HardwareConfig, ModelConfig, RunConfig, SimConfig,
                     load_config)
from .engine import Timeline, breakdown
from .kernels import BACKEND
from .sim import RunResult, simulate

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "Flags", "HardwareConfig", "ModelConfig", "RunConfig",
    "RunResult", "SimConfig", "Timeline", "breakdown", "load_config", "simulate",
]
