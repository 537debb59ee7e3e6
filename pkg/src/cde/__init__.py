"""Compressed-domain density estimation.

An autoencoder maps data into ``[0, 1]^D`` and a low-rank Fourier
(characteristic-tensor) model learns the density of the latent codes.
"""
from .autoencoder import NetworkParams, init_params, mirrored_specs, preset_specs
from .density import DensityParams, density_eval, nll_batch, nll_gradients, project_simplex
from .sampler import sample_data, sample_latent
from .trainer import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "DensityParams",
    "NetworkParams",
    "TrainConfig",
    "TrainReport",
    "density_eval",
    "init_params",
    "mirrored_specs",
    "nll_batch",
    "nll_gradients",
    "preset_specs",
    "project_simplex",
    "sample_data",
    "sample_latent",
    "train",
]
