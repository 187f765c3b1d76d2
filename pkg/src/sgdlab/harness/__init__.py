from .config import (
    ExperimentConfig,
    config_hash,
    load_config,
    parse_config,
    serialize_config,
)
from .experiments import CSV_HEADER, run_experiment, run_property_battery, write_csv
from .ratefit import RateFit, fit_loglog_slope

__all__ = [
    "CSV_HEADER",
    "ExperimentConfig",
    "RateFit",
    "config_hash",
    "fit_loglog_slope",
    "load_config",
    "parse_config",
    "run_experiment",
    "run_property_battery",
    "serialize_config",
    "write_csv",
]
