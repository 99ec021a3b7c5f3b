"""Superpixel state-space super-resolution toolkit.

Thin Python surface over the C++ core: selective state-space scans over
superpixel tokens, multi-scale expert routing, image metrics, and the model
inference / toy-training entry points.
"""

from ._core import (
    __version__,
    bicubic_resize,
    gmacs,
    gradcheck,
    init_weights,
    param_count,
    psnr_y,
    real_bits,
    scan,
    ssim_y,
    superpixels,
    train_toy_losses,
    upscale,
)

__all__ = [
    "__version__",
    "bicubic_resize",
    "gmacs",
    "gradcheck",
    "init_weights",
    "param_count",
    "psnr_y",
    "real_bits",
    "scan",
    "ssim_y",
    "superpixels",
    "train_toy_losses",
    "upscale",
]
