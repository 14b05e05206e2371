"""Inference helpers: clamped forward pass and rotation self-ensemble."""

import logging

import numpy as np

from ..data.images import ImageBuffer, rotate90
from .model import ModelParameters, model_forward

logger = logging.getLogger(__name__)

ROTATIONS = (0, 1, 2, 3)


def _forward_array(params: ModelParameters, pixels: np.ndarray) -> np.ndarray:
    """Unclamped forward pass of one H x W x 3 array (no graph is recorded)."""
    buffer = ImageBuffer(pixels=pixels)
    out = model_forward(params, buffer.to_tensor(dtype=params.dtype))
    return np.transpose(out.data[0], (1, 2, 0))


def infer(params: ModelParameters, image: ImageBuffer) -> ImageBuffer:
    """Single forward pass, clamped to [0, 1]."""
    out = _forward_array(params, image.pixels)
    return ImageBuffer.from_array(np.clip(out, 0.0, 1.0))


def self_ensemble_raw(params: ModelParameters, image: ImageBuffer) -> np.ndarray:
    """Unclamped float64 mean of the four un-rotated rotation outputs."""
    total = np.zeros(image.pixels.shape, dtype=np.float64)
    for k in ROTATIONS:
        rotated = rotate90(image.pixels, k)
        restored = _forward_array(params, rotated)
        total += rotate90(restored, -k).astype(np.float64)
    return total / len(ROTATIONS)


def self_ensemble_infer(params: ModelParameters, image: ImageBuffer) -> ImageBuffer:
    """Average the model over the four 90-degree rotations of ``image``, clamped."""
    logger.debug(f"Self-ensemble inference on {image.height}x{image.width}")
    return ImageBuffer.from_array(np.clip(self_ensemble_raw(params, image), 0.0, 1.0))


def restore(params: ModelParameters, image: ImageBuffer, ensemble: bool = False) -> ImageBuffer:
    return self_ensemble_infer(params, image) if ensemble else infer(params, image)
