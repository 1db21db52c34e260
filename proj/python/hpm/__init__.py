"""Hierarchical part model face detection and landmark localization."""

from ._hpm import (
    ConfigError,
    ConvergenceError,
    DataError,
    Detector,
    DomainError,
    NotFoundError,
    __version__,
    default_config,
    gdt_1d,
    load_image,
    localization_metrics,
    occlusion_pr,
    save_png,
    supervise,
    train,
    validate_config,
    write_planted_dataset,
)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "Detector",
    "DomainError",
    "NotFoundError",
    "__version__",
    "default_config",
    "gdt_1d",
    "load_image",
    "localization_metrics",
    "occlusion_pr",
    "save_png",
    "supervise",
    "train",
    "validate_config",
    "write_planted_dataset",
]
