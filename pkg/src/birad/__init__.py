"""Adapter-extended latent diffusion for blind image restoration, at desk scale.

The package is organised around one restoration pipeline:

    degrade    synthetic blur/downsample/noise/jpeg cascades
    codec      fixed orthonormal image <-> latent codec
    schedule   diffusion noise schedule and deterministic reverse steps
    denoiser   miniature latent U-Net with the plug-in adapter path
    attention  the extended-attention primitives the adapter is built on
    train      adapter fine-tuning (and backbone pretraining) loops
    sampler    tiled, guided restoration loop
    tiling     overlapping Gaussian-feathered tile plans
    analyze    feature robustness, PSNR/MS-SSIM, xi sweeps, param counts
    cli        batch command-line front end
"""

from . import (
    analyze,
    archive,
    attention,
    cli,
    codec,
    degrade,
    denoiser,
    images,
    sampler,
    schedule,
    seeds,
    textures,
    tiling,
    train,
)

__all__ = [
    "analyze",
    "archive",
    "attention",
    "cli",
    "codec",
    "degrade",
    "denoiser",
    "images",
    "sampler",
    "schedule",
    "seeds",
    "textures",
    "tiling",
    "train",
]

__version__ = "0.1.0"
