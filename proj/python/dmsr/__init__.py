"""Blind super-resolution with degradation-aware meta modules.

Images are float32 arrays of shape (H, W, 3) with values in [0, 1].
"""

from ._dmsr import (
    Model,
    bicubic_downsample,
    bicubic_upsample,
    blur,
    degrade,
    gaussian_kernel,
    psnr_y,
    ssim_y,
    synthetic_image,
)

__all__ = [
    "Model",
    "bicubic_downsample",
    "bicubic_upsample",
    "blur",
    "degrade",
    "gaussian_kernel",
    "psnr_y",
    "ssim_y",
    "synthetic_image",
]
