"""Python bindings for the coclr core."""

from ._coclr import (
    ConfigError,
    build_logits,
    build_mask,
    config_keys,
    default_config,
    generate_dataset,
    info_nce,
    linear_probe,
    mil_nce,
    normalize_config,
    override_config,
    read_metrics,
    retrieval,
    run_experiment,
    summarize_run,
)

__all__ = [
    "ConfigError",
    "build_logits",
    "build_mask",
    "config_keys",
    "default_config",
    "generate_dataset",
    "info_nce",
    "linear_probe",
    "mil_nce",
    "normalize_config",
    "override_config",
    "read_metrics",
    "retrieval",
    "run_experiment",
    "summarize_run",
]
