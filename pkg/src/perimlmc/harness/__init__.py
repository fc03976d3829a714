"""Case configuration, sample scheduling, reporting and the command line."""

from .config import PRESETS, CaseStudy, load_case, preset
from .runner import BeamLevelModel, run_case, seed_for

__all__ = ["PRESETS", "CaseStudy", "BeamLevelModel", "load_case", "preset", "run_case", "seed_for"]
