"""Experiment orchestration, persistence, configuration, metrics and the CLI."""
from .config import ExperimentConfig, default_config, load_config, parse_config
from .container import load_checkpoint, read_array, save_bitmap, save_checkpoint, write_array
from .metrics import MetricsReport, binned_errors, nmse, relative_error_map, ssim_value

__all__ = [
    "ExperimentConfig", "MetricsReport", "binned_errors", "default_config", "load_checkpoint",
    "load_config", "nmse", "parse_config", "read_array", "relative_error_map", "save_bitmap",
    "save_checkpoint", "ssim_value", "write_array",
]
