"""Base codec class."""

import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict

from ..data.images import ImageBuffer
from ..errors import CodecError

logger = logging.getLogger(__name__)


class CodecResult(BaseModel):
    """Decoded image and compressed size of one (image, qp) job."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    decoded: ImageBuffer
    bits: int
    qp: int
    transcript: str = ""


class BaseCodec(ABC):
    """Base class for all codecs driven by the orchestrator."""

    name: str = "base"
    display_name: str = "Base Codec"
    description: str = ""
    qp_range: Tuple[int, int] = (0, 0)
    size_decreases_with_qp: bool = True

    @abstractmethod
    async def run(self, image: ImageBuffer, qp: int, workdir: Optional[Path] = None) -> CodecResult:
        """
        Encode ``image`` at ``qp``, decode the bitstream and report its size.

        Args:
            image: Ground-truth image
            qp: Quality parameter inside ``qp_range``
            workdir: Directory for temporary files (codecs that need them)

        Returns:
            CodecResult with the decoded image and bit count
        """
        pass

    async def degrade(self, image: ImageBuffer, qp: int, workdir: Optional[Path] = None) -> CodecResult:
        """Checked wrapper around :meth:`run`: qp range and decoded size are validated."""
        low, high = self.qp_range
        if not low <= qp <= high:
            raise CodecError(f"{self.name}: qp {qp} outside [{low}, {high}]")
        result = await self.run(image, qp, workdir)
        if result.decoded.pixels.shape != image.pixels.shape:
            raise CodecError(
                f"{self.name}: decoded size {result.decoded.height}x{result.decoded.width} "
                f"does not match input {image.height}x{image.width}",
                transcript=result.transcript,
            )
        logger.debug(f"{self.name} qp={qp}: {result.bits} bits for {image.height}x{image.width}")
        return result

    def qps(self) -> range:
        return range(self.qp_range[0], self.qp_range[1] + 1)

    def create_result(self, decoded: ImageBuffer, bits: int, qp: int, transcript: str = "") -> CodecResult:
        """Helper method to create a codec result."""
        return CodecResult(decoded=decoded, bits=int(bits), qp=qp, transcript=transcript)
