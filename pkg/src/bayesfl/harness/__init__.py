"""Configuration, experiment drivers and the command-line interface."""

from .config import (
    ExperimentConfig,
    MseVerifyConfig,
    OracleConfig,
    load_config,
    parse_config,
)

__all__ = ["ExperimentConfig", "MseVerifyConfig", "OracleConfig", "load_config", "parse_config"]
