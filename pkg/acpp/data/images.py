"""Image buffers and lossless image file IO."""

import io
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, field_validator

from ..engine import Tensor, rot90 as tensor_rot90
from ..errors import ImageIOError, TensorShapeError

logger = logging.getLogger(__name__)

SUPPORTED_SUFFIXES = {".png": "PNG", ".ppm": "PPM"}


class ImageBuffer(BaseModel):
    """H x W x 3 pixel array with components in [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    pixels: np.ndarray

    @field_validator("pixels")
    @classmethod
    def _check_pixels(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 3 or value.shape[2] != 3 or value.shape[0] < 1 or value.shape[1] < 1:
            raise ValueError(f"pixels must have shape (H, W, 3), got {value.shape}")
        return value

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return 3

    @property
    def num_pixels(self) -> int:
        return self.height * self.width

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ImageBuffer":
        return cls(pixels=np.ascontiguousarray(array, dtype=np.float32))

    def to_tensor(self, dtype=np.float32) -> Tensor:
        """1 x 3 x H x W tensor view of the image."""
        chw = np.transpose(self.pixels, (2, 0, 1))[None]
        return Tensor(np.ascontiguousarray(chw, dtype=dtype))

    @classmethod
    def from_tensor(cls, tensor: Union[Tensor, np.ndarray], index: int = 0) -> "ImageBuffer":
        data = tensor.data if isinstance(tensor, Tensor) else tensor
        if data.ndim != 4 or data.shape[1] != 3:
            raise TensorShapeError(f"expected N x 3 x H x W, got {data.shape}")
        return cls.from_array(np.transpose(data[index], (1, 2, 0)))

    def quantized(self) -> "ImageBuffer":
        """Round-trip through 8-bit samples (what a saved file would hold)."""
        return ImageBuffer.from_array(to_uint8(self.pixels).astype(np.float32) / np.float32(255))


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to 8-bit samples, rounding half away from zero."""
    scaled = np.clip(pixels.astype(np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def decode_image_bytes(data: bytes, source: str) -> ImageBuffer:
    try:
        with Image.open(io.BytesIO(data)) as image:
            image.load()
            if image.mode != "RGB":
                if image.mode not in ("L", "P", "RGBA"):
                    raise ImageIOError(source, f"unsupported image mode {image.mode}")
                logger.warning(f"Converting {source} from {image.mode} to RGB")
                image = image.convert("RGB")
            samples = np.asarray(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        if isinstance(e, ImageIOError):
            raise
        raise ImageIOError(source, f"unreadable image ({e})") from e
    return ImageBuffer.from_array(samples.astype(np.float32) / np.float32(255))


def encode_image_bytes(buffer: ImageBuffer, image_format: str = "PNG") -> bytes:
    stream = io.BytesIO()
    Image.fromarray(to_uint8(buffer.pixels)).save(stream, format=image_format)
    return stream.getvalue()


def load_image(path: Union[str, Path]) -> ImageBuffer:
    """Read an 8-bit RGB PNG or PPM file into [0, 1] floats."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageIOError(str(path), f"unsupported format {path.suffix!r} (use .png or .ppm)")
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ImageIOError(str(path), f"cannot read file ({e})") from e
    return decode_image_bytes(data, str(path))


def save_image(buffer: ImageBuffer, path: Union[str, Path]) -> None:
    """Write ``buffer`` as 8-bit RGB; the format follows the file suffix."""
    path = Path(path)
    image_format = SUPPORTED_SUFFIXES.get(path.suffix.lower())
    if image_format is None:
        raise ImageIOError(str(path), f"unsupported format {path.suffix!r} (use .png or .ppm)")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_image_bytes(buffer, image_format))
    except OSError as e:
        raise ImageIOError(str(path), f"cannot write file ({e})") from e


def rotate90(image: Union[ImageBuffer, Tensor, np.ndarray], k: int):
    """Rotate counter-clockwise by ``k`` quarter turns (pure index permutation).

    Pixel (r, c) of an H x W image lands at (W - 1 - c, r) for k = 1. Image
    buffers, bare H x W (x C) arrays and N x C x H x W tensors share this
    convention.
    """
    k %= 4
    if isinstance(image, ImageBuffer):
        return ImageBuffer(pixels=np.ascontiguousarray(np.rot90(image.pixels, k, axes=(0, 1))))
    if isinstance(image, Tensor):
        return tensor_rot90(image, k)
    return np.ascontiguousarray(np.rot90(image, k, axes=(0, 1)))
