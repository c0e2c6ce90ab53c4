"""Siamese capsule networks for pairwise face verification."""

from ._core import (
    GRADCHECK_TOLERANCE,
    CheckpointError,
    ConfigError,
    Error,
    ImageError,
    Model,
    amsgrad,
    concrete_dropout_mask,
    config_echo,
    config_keys,
    contrastive_loss,
    distance,
    double_margin_loss,
    dynamic_route,
    evaluate,
    gradcheck,
    load_pgm,
    read_checkpoint,
    select_threshold,
    squash,
    train,
    write_checkpoint,
)

__all__ = [
    "GRADCHECK_TOLERANCE",
    "CheckpointError",
    "ConfigError",
    "Error",
    "ImageError",
    "Model",
    "amsgrad",
    "concrete_dropout_mask",
    "config_echo",
    "config_keys",
    "contrastive_loss",
    "distance",
    "double_margin_loss",
    "dynamic_route",
    "evaluate",
    "gradcheck",
    "load_pgm",
    "read_checkpoint",
    "select_threshold",
    "squash",
    "train",
    "write_checkpoint",
]
