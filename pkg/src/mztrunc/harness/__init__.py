"""Configuration, synthetic inputs, experiment runner and the ``mz`` CLI."""

from .config import CONFIG_SCHEMA, ExperimentConfig
from .generators import SyntheticFamily, generate_sequence, lambda_for_peak, measured_lambda
from .runner import EXIT_DIVERGENCE, EXIT_INVARIANT, EXIT_OK, EXIT_SCHEMA, execute, run_config

__all__ = [
    "CONFIG_SCHEMA",
    "ExperimentConfig",
    "SyntheticFamily",
    "generate_sequence",
    "lambda_for_peak",
    "measured_lambda",
    "execute",
    "run_config",
    "EXIT_OK",
    "EXIT_SCHEMA",
    "EXIT_DIVERGENCE",
    "EXIT_INVARIANT",
]
