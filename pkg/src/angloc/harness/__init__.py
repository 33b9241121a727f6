"""Monte-Carlo sweeps, reports and their configuration."""

from .config import (
    CONFIG_TYPES,
    EXPERIMENT_KINDS,
    ConfigError,
    E2EConfig,
    IdentificationConfig,
    ResolutionConfig,
    VarianceConfig,
    config_hash,
    load_config,
    make_config,
)
from .experiments import (
    EXPERIMENTS,
    ExperimentResult,
    run_e2e_localization,
    run_identification_sweep,
    run_resolution_sweep,
    run_variance_sweep,
)
from .report import run_experiment, write_report
