"""Config-driven sweeps: baseline, noise and drop conditions, with CSV and SVG reports."""

from markovlens.pipeline.config import (
    Condition, ExperimentConfig, conditions, load_config, panel_seed_for, parse_config, seed_for,
)
from markovlens.pipeline.report import ci95_half_width, emit_report
from markovlens.pipeline.runner import (
    ConditionRecord, ExperimentResult, RunFailure, RunOutcome, collect_panel, execute_run, run_experiment,
)

__all__ = [
    "Condition", "ConditionRecord", "ExperimentConfig", "ExperimentResult", "RunFailure", "RunOutcome",
    "ci95_half_width", "collect_panel", "conditions", "emit_report", "execute_run", "load_config",
    "panel_seed_for", "parse_config", "run_experiment", "seed_for",
]
