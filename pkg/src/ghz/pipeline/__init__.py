"""Configuration, presets, orchestration, reports and the command line."""

from .config import ConfigError, RunConfig, load_config
from .presets import PRESETS, preset_config
from .report import RunReport, emit_outputs
from .study import StageError, run_blowup_check, run_convergence_study

__all__ = [
    "ConfigError", "RunConfig", "load_config", "PRESETS", "preset_config", "RunReport",
    "emit_outputs", "StageError", "run_blowup_check", "run_convergence_study",
]
