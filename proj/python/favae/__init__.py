"""Frequency-augmented VQ-VAE: spectral losses, training and diagnostics."""

from ._core import (
    ContractError,
    DimensionError,
    IoError,
    Model,
    NumericError,
    UsageError,
    band_fraction,
    default_config,
    dft2,
    ffl,
    freq_map,
    gradcheck,
    make_dataset,
    read_pnm,
    train,
)

__all__ = [
    "ContractError",
    "DimensionError",
    "IoError",
    "Model",
    "NumericError",
    "UsageError",
    "band_fraction",
    "default_config",
    "dft2",
    "ffl",
    "freq_map",
    "gradcheck",
    "make_dataset",
    "read_pnm",
    "train",
]
