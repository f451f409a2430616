"""Configuration, experiment drivers and the command-line interface."""
from .config import ConfigError, ExperimentConfig, format_config, load_config, parse_config
from .output import read_csv, write_csv
from .studies import (
    RunRecord,
    run_bias_study,
    run_cost_report,
    run_mode_sweep,
    run_noise_sweep,
    run_sensor_study,
)
from .workspace import Workspace
