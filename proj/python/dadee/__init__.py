"""Multi-exit encoder with per-layer adversarial adaptation and early exit."""

from ._core import (
    ADistance,
    Checkpoint,
    Config,
    Data,
    ExitDecision,
    Model,
    NumericError,
    SweepPoint,
    ValidationError,
    a_distance,
    adapt,
    d_a_from_error,
    evaluate,
    export_features,
    load_checkpoint,
    load_config,
    parse_config,
    prepare_data,
    speedup,
    sweep_alpha,
    train_source,
)

__all__ = [
    "ADistance",
    "Checkpoint",
    "Config",
    "Data",
    "ExitDecision",
    "Model",
    "NumericError",
    "SweepPoint",
    "ValidationError",
    "a_distance",
    "adapt",
    "d_a_from_error",
    "evaluate",
    "export_features",
    "load_checkpoint",
    "load_config",
    "parse_config",
    "prepare_data",
    "speedup",
    "sweep_alpha",
    "train_source",
]
