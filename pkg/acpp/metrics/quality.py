"""Reference quality metrics computed directly in float64 numpy."""

import math
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel

from ..data.images import ImageBuffer
from ..errors import ContractError, TensorShapeError

# Returned by psnr() for identical inputs.
PSNR_INFINITY = math.inf

ArrayLike = Union[ImageBuffer, np.ndarray]


def _pixels(image: ArrayLike) -> np.ndarray:
    data = image.pixels if isinstance(image, ImageBuffer) else np.asarray(image)
    return data.astype(np.float64, copy=False)


def psnr(a: ArrayLike, b: ArrayLike, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE) over all pixels and channels.

    Returns :data:`PSNR_INFINITY` when the inputs are identical.
    """
    if peak <= 0:
        raise ContractError(f"peak must be positive, got {peak}")
    x, y = _pixels(a), _pixels(b)
    if x.shape != y.shape:
        raise TensorShapeError(f"psnr needs equal shapes, got {x.shape} and {y.shape}")
    mse = float(np.mean(np.square(x - y)))
    if mse == 0.0:
        return PSNR_INFINITY
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized ``size`` x ``size`` Gaussian kernel (outer product of 1-D samples)."""
    if size < 1 or size % 2 == 0:
        raise ContractError(f"window size must be odd, got {size}")
    if sigma <= 0:
        raise ContractError(f"window sigma must be positive, got {sigma}")
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    samples = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    samples /= samples.sum()
    window = np.outer(samples, samples)
    return window / window.sum()


class SsimComponents(BaseModel):
    """Spatial means of the luminance, contrast and structure maps."""
    luminance: float
    contrast: float
    structure: float
    ssim: float


def _filter(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    """'valid' windowed weighted mean of a 2-D plane."""
    patches = sliding_window_view(plane, window.shape)
    return np.tensordot(patches, window, axes=([2, 3], [0, 1]))


def ssim_components(
    a: np.ndarray,
    b: np.ndarray,
    window: np.ndarray,
    k1: float = 0.01,
    k2: float = 0.03,
    peak: float = 1.0,
) -> SsimComponents:
    """Windowed L, C and S of two single-channel planes."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise TensorShapeError(f"ssim_components needs equal 2-D planes, got {x.shape} and {y.shape}")
    if x.shape[0] < window.shape[0] or x.shape[1] < window.shape[1]:
        raise TensorShapeError(f"plane {x.shape} is smaller than the {window.shape[0]}-wide window")

    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    c3 = c2 / 2.0

    mu_x, mu_y = _filter(x, window), _filter(y, window)
    var_x = np.maximum(_filter(x * x, window) - mu_x * mu_x, 0.0)
    var_y = np.maximum(_filter(y * y, window) - mu_y * mu_y, 0.0)
    cov = _filter(x * y, window) - mu_x * mu_y
    sigma_x, sigma_y = np.sqrt(var_x), np.sqrt(var_y)

    luminance = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    contrast = (2.0 * sigma_x * sigma_y + c2) / (var_x + var_y + c2)
    structure = (cov + c3) / (sigma_x * sigma_y + c3)
    return SsimComponents(
        luminance=float(luminance.mean()),
        contrast=float(contrast.mean()),
        structure=float(structure.mean()),
        ssim=float((luminance * contrast * structure).mean()),
    )
