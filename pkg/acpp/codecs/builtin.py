"""Built-in 8x8 block DCT degrader used when no external codec is configured.

Each channel is split into 8x8 blocks (edges replicated up to a multiple of
8), transformed with the orthonormal DCT-II, and quantized uniformly with a
step of 2^(2 qp / 3) on the 0..255 scale, so qp 0..9 spans steps 1..64.
Reconstruction dequantizes, inverts the transform, clamps and rounds to 8
bits.

The bit count is the exact length of a decodable stream: a fixed header,
then per block the pair count as an exp-Golomb code followed by (zero run,
level) pairs over the zigzag scan, runs coded ue(v) and levels se(v). Every
level magnitude shrinks as the step grows and a dropped pair never costs more
than the merged run it creates, so the count is non-increasing in qp.
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..data.images import ImageBuffer
from ..errors import TensorShapeError
from .base import BaseCodec, CodecResult

logger = logging.getLogger(__name__)

BLOCK = 8
QP_MIN, QP_MAX = 0, 9
HEADER_BITS = 16 + 16 + 8  # width, height, qp as fixed-width fields


def quant_step(qp: int) -> float:
    return float(2.0 ** (2.0 * qp / 3.0))


@lru_cache(maxsize=1)
def dct_matrix() -> np.ndarray:
    """Orthonormal 8-point DCT-II basis, rows are frequencies."""
    n = np.arange(BLOCK)
    basis = np.cos(np.pi * (2 * n[None, :] + 1) * n[:, None] / (2 * BLOCK))
    basis[0] *= np.sqrt(1.0 / BLOCK)
    basis[1:] *= np.sqrt(2.0 / BLOCK)
    return basis


@lru_cache(maxsize=1)
def zigzag_order() -> np.ndarray:
    """Flat indices of an 8x8 block in zigzag scan order."""
    cells = [(r, c) for r in range(BLOCK) for c in range(BLOCK)]
    cells.sort(key=lambda rc: (rc[0] + rc[1], rc[1] if (rc[0] + rc[1]) % 2 == 0 else rc[0]))
    return np.array([r * BLOCK + c for r, c in cells])


def _to_blocks(plane: np.ndarray) -> Tuple[np.ndarray, Tuple[int, int]]:
    h, w = plane.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    rows, cols = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    blocks = padded.reshape(rows, BLOCK, cols, BLOCK).transpose(0, 2, 1, 3)
    return blocks.reshape(rows * cols, BLOCK, BLOCK), (rows, cols)


def _from_blocks(blocks: np.ndarray, grid: Tuple[int, int], shape: Tuple[int, int]) -> np.ndarray:
    rows, cols = grid
    plane = blocks.reshape(rows, cols, BLOCK, BLOCK).transpose(0, 2, 1, 3)
    return plane.reshape(rows * BLOCK, cols * BLOCK)[: shape[0], : shape[1]]


def forward_dct(pixels: np.ndarray) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Per-channel block DCT of an H x W x 3 image; returns (3, blocks, 8, 8) on the 0..255 scale."""
    basis = dct_matrix()
    coefficients = []
    grid = (0, 0)
    for channel in range(pixels.shape[2]):
        plane = pixels[:, :, channel].astype(np.float64) * 255.0 - 128.0
        blocks, grid = _to_blocks(plane)
        coefficients.append(basis @ blocks @ basis.T)
    return np.stack(coefficients), grid


def inverse_dct(coefficients: np.ndarray, grid: Tuple[int, int], shape: Tuple[int, int]) -> np.ndarray:
    basis = dct_matrix()
    planes = [
        _from_blocks(basis.T @ channel @ basis, grid, shape) + 128.0
        for channel in coefficients
    ]
    return np.stack(planes, axis=-1)


def _ue_bits(values: np.ndarray) -> np.ndarray:
    """Lengths of unsigned exp-Golomb codes, 2 * floor(log2(v + 1)) + 1."""
    _, exponent = np.frexp(values.astype(np.float64) + 1.0)
    return 2 * (exponent.astype(np.int64) - 1) + 1


def _se_bits(levels: np.ndarray) -> np.ndarray:
    mapped = np.where(levels > 0, 2 * levels - 1, -2 * levels)
    return _ue_bits(mapped)


def coded_bits(levels: np.ndarray) -> int:
    """Exact stream length (without header) of quantized (..., 8, 8) blocks."""
    scan = levels.reshape(-1, BLOCK * BLOCK)[:, zigzag_order()].astype(np.int64)
    block_ids, positions = np.nonzero(scan)
    pair_counts = np.bincount(block_ids, minlength=scan.shape[0])

    previous = np.full(positions.shape, -1, dtype=np.int64)
    same_block = np.zeros(positions.shape, dtype=bool)
    same_block[1:] = block_ids[1:] == block_ids[:-1]
    previous[1:][same_block[1:]] = positions[:-1][same_block[1:]]
    runs = positions - previous - 1

    total = _ue_bits(pair_counts).sum()
    total += _ue_bits(runs).sum() + _se_bits(scan[block_ids, positions]).sum()
    return int(total)


def quantize(pixels: np.ndarray, qp: int) -> Tuple[np.ndarray, np.ndarray, Tuple[int, int]]:
    """Return (coefficients, integer levels, block grid) for ``pixels`` at ``qp``."""
    coefficients, grid = forward_dct(pixels)
    levels = np.rint(coefficients / quant_step(qp)).astype(np.int64)
    return coefficients, levels, grid


def builtin_dct_degrader(image: ImageBuffer, qp: int) -> Tuple[ImageBuffer, int]:
    """Degrade ``image`` at ``qp`` and return (decoded image, bit count)."""
    if not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"builtin degrader qp must lie in [{QP_MIN}, {QP_MAX}], got {qp}")
    if image.pixels.ndim != 3 or image.pixels.shape[2] != 3:
        raise TensorShapeError(f"expected H x W x 3 pixels, got {image.pixels.shape}")

    _, levels, grid = quantize(image.pixels, qp)
    reconstructed = inverse_dct(levels * quant_step(qp), grid, (image.height, image.width))
    samples = np.clip(np.floor(reconstructed + 0.5), 0, 255)
    decoded = ImageBuffer.from_array(samples.astype(np.float32) / np.float32(255))
    return decoded, HEADER_BITS + coded_bits(levels)


class BuiltinDctCodec(BaseCodec):
    """In-process block DCT degrader with a 10-step quantizer ladder."""

    name = "builtin"
    display_name = "Built-in DCT"
    description = "8x8 block DCT with uniform quantization and exp-Golomb run/level coding"
    qp_range = (QP_MIN, QP_MAX)
    size_decreases_with_qp = True

    async def run(self, image: ImageBuffer, qp: int, workdir: Optional[Path] = None) -> CodecResult:
        decoded, bits = builtin_dct_degrader(image, qp)
        return self.create_result(decoded, bits, qp)
