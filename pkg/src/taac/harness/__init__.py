"""Configuration, orchestration, metrics and the command line."""
from .config import ConfigError, ExperimentConfig, load_config
from .metrics import coverage_summary, n_auc, n_score, repetition_percentage, write_coverage_csv
from .runner import evaluate, load_reference_scores, rollout_states, run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "coverage_summary", "n_auc", "n_score",
           "repetition_percentage", "write_coverage_csv", "evaluate", "load_reference_scores",
           "rollout_states", "run_experiment"]
