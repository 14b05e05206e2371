"""Quality metrics and training losses."""

from .losses import LossTerms, compute_loss, effective_scales, mae_loss, ms_ssim, total_loss
from .quality import PSNR_INFINITY, SsimComponents, gaussian_window, psnr, ssim_components

__all__ = [
    "LossTerms",
    "PSNR_INFINITY",
    "SsimComponents",
    "compute_loss",
    "effective_scales",
    "gaussian_window",
    "mae_loss",
    "ms_ssim",
    "psnr",
    "ssim_components",
    "total_loss",
]
