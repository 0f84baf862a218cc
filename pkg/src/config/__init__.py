"""Experiment configuration."""

from config.settings import (
    ExperimentConfig,
    Generator,
    Protocol,
    format_config,
    load_config,
    parse_config_text,
    validate_config,
)

__all__ = [
    'ExperimentConfig',
    'Generator',
    'Protocol',
    'format_config',
    'load_config',
    'parse_config_text',
    'validate_config',
]
