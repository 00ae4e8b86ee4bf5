"""Vehicle-platoon benchmark, sweeps, configuration files and CSV output."""

from .io import emit_csv, load_config, save_config
from .platoon import PlatoonConfig, build_platoon_scenario, c_app, reference_input
from .sweep import SweepResult, run_sweep

__all__ = ["emit_csv", "load_config", "save_config", "PlatoonConfig", "build_platoon_scenario",
           "c_app", "reference_input", "SweepResult", "run_sweep"]
