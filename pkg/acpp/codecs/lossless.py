"""Lossless pass-through codec (PNG in memory)."""

from pathlib import Path
from typing import Optional

from ..data.images import ImageBuffer, decode_image_bytes, encode_image_bytes
from .base import BaseCodec, CodecResult


class LosslessCodec(BaseCodec):
    """Stores the image as PNG; decoding returns the 8-bit samples unchanged."""

    name = "lossless"
    display_name = "Lossless PNG"
    description = "Identity codec; bits are the PNG file size"
    qp_range = (0, 0)
    size_decreases_with_qp = True

    def __init__(self, qp_range=(0, 9)):
        # qp is accepted and ignored so the codec can stand in for any ladder.
        self.qp_range = tuple(qp_range)

    async def run(self, image: ImageBuffer, qp: int, workdir: Optional[Path] = None) -> CodecResult:
        payload = encode_image_bytes(image, "PNG")
        decoded = decode_image_bytes(payload, f"<{self.name} qp={qp}>")
        return self.create_result(decoded, 8 * len(payload), qp)
