"""Differentiable MS-SSIM, MAE and the two-phase training objective."""

import logging
import math
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..data.images import ImageBuffer
from ..engine import (
    Tensor,
    absolute,
    affine,
    avg_pool2x2,
    conv2d,
    elementwise,
    mean,
    mul,
    power,
    reshape,
)
from ..errors import TensorShapeError
from ..models import LossConfig, Phase
from .quality import gaussian_window

logger = logging.getLogger(__name__)


def effective_scales(config: LossConfig, extent: int) -> Tuple[int, List[float]]:
    """Scale count and renormalized weights usable at spatial ``extent``.

    Keeps the largest M <= num_scales with window * 2^(M-1) <= extent and the
    first M weights rescaled to sum to 1.
    """
    if extent < config.window_size:
        raise TensorShapeError(
            f"spatial extent {extent} is smaller than the {config.window_size}-pixel SSIM window"
        )
    scales = config.num_scales
    while scales > 1 and config.window_size * 2 ** (scales - 1) > extent:
        scales -= 1
    kept = config.scale_weights[:scales]
    total = math.fsum(kept)
    return scales, [w / total for w in kept]


def _ssim_maps(a: Tensor, b: Tensor, window: Tensor, c1: float, c2: float) -> Tuple[Tensor, Tensor]:
    """Luminance map and combined contrast-structure map of (M, 1, H, W) planes.

    With C3 = C2 / 2 the contrast and structure terms multiply to
    (2 cov + C2) / (var_a + var_b + C2), which needs no square root.
    """
    mu_a = conv2d(a, window, padding=0)
    mu_b = conv2d(b, window, padding=0)
    mu_aa = mul(mu_a, mu_a)
    mu_bb = mul(mu_b, mu_b)
    mu_ab = mul(mu_a, mu_b)
    var_a = conv2d(mul(a, a), window, padding=0) - mu_aa
    var_b = conv2d(mul(b, b), window, padding=0) - mu_bb
    cov = conv2d(mul(a, b), window, padding=0) - mu_ab

    luminance = elementwise(
        affine(mu_ab, scale=2.0, shift=c1),
        affine(mu_aa + mu_bb, shift=c1),
        "div",
    )
    contrast_structure = elementwise(
        affine(cov, scale=2.0, shift=c2),
        affine(var_a + var_b, shift=c2),
        "div",
    )
    return luminance, contrast_structure


def _ms_ssim_tensor(a: Tensor, b: Tensor, config: LossConfig) -> Tensor:
    if a.shape != b.shape or a.ndim != 4:
        raise TensorShapeError(f"ms_ssim needs equal N x C x H x W shapes, got {a.shape} and {b.shape}")
    n, c, h, w = a.shape
    scales, weights = effective_scales(config, min(h, w))

    window = Tensor(gaussian_window(config.window_size, config.window_sigma).astype(a.dtype)[None, None])
    c1 = (config.k1 * config.peak) ** 2
    c2 = (config.k2 * config.peak) ** 2

    # Channels are scored independently and averaged at the end.
    x = reshape(a, (n * c, 1, h, w))
    y = reshape(b, (n * c, 1, h, w))
    score: Optional[Tensor] = None
    for scale, weight in enumerate(weights):
        if scale > 0:
            x, y = avg_pool2x2(x), avg_pool2x2(y)
        luminance, contrast_structure = _ssim_maps(x, y, window, c1, c2)
        factor = power(mean(contrast_structure, axes=(2, 3), keepdims=True), weight)
        if scale == scales - 1:
            factor = mul(factor, power(mean(luminance, axes=(2, 3), keepdims=True), weight))
        score = factor if score is None else mul(score, factor)
    return mean(score)


def ms_ssim(
    a: Union[Tensor, ImageBuffer],
    b: Union[Tensor, ImageBuffer],
    config: Optional[LossConfig] = None,
) -> Union[Tensor, float]:
    """Multi-scale SSIM in [0, 1].

    Tensors (N x 3 x H x W) give a differentiable scalar tensor; image
    buffers are scored in float64 and give a float.
    """
    config = config or LossConfig()
    if isinstance(a, ImageBuffer) and isinstance(b, ImageBuffer):
        return float(_ms_ssim_tensor(a.to_tensor(np.float64), b.to_tensor(np.float64), config).item())
    return _ms_ssim_tensor(a, b, config)


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every sample and element."""
    if pred.shape != target.shape:
        raise TensorShapeError(f"mae_loss needs equal shapes, got {pred.shape} and {target.shape}")
    return mean(absolute(pred - target))


class LossTerms(BaseModel):
    """Objective value with the parts that produced it."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    total: Tensor
    mae: float
    ms_ssim: Optional[float] = None


def compute_loss(pred: Tensor, target: Tensor, config: LossConfig, phase: Phase) -> LossTerms:
    """MAE alone, or lambda * (1 - MS-SSIM) + MAE in the combined phase."""
    mae = mae_loss(pred, target)
    if Phase(phase) is Phase.MAE_ONLY:
        return LossTerms(total=mae, mae=mae.item())
    similarity = _ms_ssim_tensor(pred, target, config)
    total = affine(similarity, scale=-config.lambda_, shift=config.lambda_) + mae
    return LossTerms(total=total, mae=mae.item(), ms_ssim=similarity.item())


def total_loss(pred: Tensor, target: Tensor, config: LossConfig, phase: Phase) -> Tensor:
    return compute_loss(pred, target, config, phase).total
