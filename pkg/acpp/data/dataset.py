"""Dataset manifests, splits, patch sampling and training pair construction."""

import asyncio
import logging
import math
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Deque, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import settings
from ..engine import Tensor
from ..errors import DatasetError, TensorShapeError
from ..models import DatasetSplit
from ..utils import derive_rng
from .images import ImageBuffer, load_image, rotate90

if TYPE_CHECKING:
    from ..codecs.base import BaseCodec

logger = logging.getLogger(__name__)


def _read_lines(path: Path) -> List[Tuple[int, str]]:
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    lines = []
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            lines.append((number, line))
    return lines


def _resolve(base: Path, entry: str) -> str:
    candidate = Path(entry)
    return str(candidate if candidate.is_absolute() else (base / candidate))


def read_manifest(path: Union[str, Path]) -> List[str]:
    """Image paths, one per line; relative entries resolve against the manifest's directory."""
    path = Path(path)
    paths = [_resolve(path.parent, line) for _, line in _read_lines(path)]
    if not paths:
        raise DatasetError(f"manifest {path} lists no images")
    logger.info(f"Manifest {path}: {len(paths)} image(s)")
    return paths


@dataclass
class ImagePair:
    """A decoded image, its ground truth and (when known) the compressed size."""

    name: str
    degraded: ImageBuffer
    gt: ImageBuffer
    bits: Optional[int] = None

    @property
    def bpp(self) -> Optional[float]:
        return None if self.bits is None else self.bits / self.gt.num_pixels


def read_pairs_manifest(path: Union[str, Path]) -> List[ImagePair]:
    """Read ``degraded_path,gt_path[,bits]`` lines into loaded pairs."""
    path = Path(path)
    pairs = []
    for number, line in _read_lines(path):
        fields = [part.strip() for part in line.split(",")]
        if len(fields) not in (2, 3):
            raise DatasetError(f"{path}:{number}: expected degraded_path,gt_path[,bits]")
        bits = None
        if len(fields) == 3:
            try:
                bits = int(fields[2])
            except ValueError as e:
                raise DatasetError(f"{path}:{number}: bits must be an integer, got {fields[2]!r}") from e
        degraded = load_image(_resolve(path.parent, fields[0]))
        gt = load_image(_resolve(path.parent, fields[1]))
        if degraded.pixels.shape != gt.pixels.shape:
            raise DatasetError(f"{path}:{number}: degraded and ground-truth sizes differ")
        pairs.append(ImagePair(name=fields[1], degraded=degraded, gt=gt, bits=bits))
    if not pairs:
        raise DatasetError(f"pairs manifest {path} is empty")
    return pairs


def split_dataset(paths: Sequence[str], ratio: float = 0.9, seed: int = 0) -> DatasetSplit:
    """Seeded shuffle, then the first ceil(ratio * n) paths train and the rest validate."""
    if len(paths) < 2:
        raise DatasetError(f"need at least 2 images to split, got {len(paths)}")
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio must lie in (0, 1), got {ratio}")
    order = derive_rng(seed, "split").permutation(len(paths))
    shuffled = [paths[i] for i in order]
    n_train = math.ceil(ratio * len(paths) - 1e-9)
    split = DatasetSplit(train=shuffled[:n_train], validation=shuffled[n_train:], seed=seed, ratio=ratio)
    if not split.validation:
        logger.warning(f"Validation split is empty ({len(paths)} images at ratio {ratio})")
    logger.info(f"Split: {len(split.train)} train, {len(split.validation)} validation")
    return split


def sample_patch(image: ImageBuffer, size: int, rng: np.random.Generator) -> ImageBuffer:
    """Exact size x size crop at a uniformly drawn offset."""
    if image.height < size or image.width < size:
        raise TensorShapeError(f"image {image.height}x{image.width} is smaller than patch size {size}")
    row = int(rng.integers(0, image.height - size + 1))
    col = int(rng.integers(0, image.width - size + 1))
    return ImageBuffer(pixels=image.pixels[row : row + size, col : col + size].copy())


async def make_pair(
    gt_patch: ImageBuffer,
    codec: "BaseCodec",
    qp: int,
    workdir: Optional[Path] = None,
) -> Tuple[ImageBuffer, ImageBuffer]:
    """(decode(encode(gt)), gt); the ground truth is returned untouched."""
    result = await codec.degrade(gt_patch, qp, workdir)
    return result.decoded, gt_patch


def stack_batch(images: Sequence[np.ndarray]) -> Tensor:
    """H x W x 3 arrays to one N x 3 x H x W float32 tensor."""
    return Tensor(np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2), dtype=np.float32))


class PairPool:
    """Pre-built (degraded, gt) patch pairs, grouped by patch size.

    Batches depend only on (seed, iteration): the patch size, the pair
    indices and the joint rotation are drawn from a generator derived from
    both, so prefetch threads may build them in any order.
    """

    def __init__(self, pairs: Dict[int, List[Tuple[np.ndarray, np.ndarray]]], seed: int = 0):
        self.pairs = {size: items for size, items in sorted(pairs.items()) if items}
        if not self.pairs:
            raise DatasetError("pair pool is empty")
        self.seed = seed

    @property
    def sizes(self) -> List[int]:
        return list(self.pairs)

    def __len__(self) -> int:
        return sum(len(items) for items in self.pairs.values())

    def restricted(self, sizes: Sequence[int]) -> "PairPool":
        """Pool sharing this one's pairs and seed but only the given patch sizes."""
        missing = [size for size in sizes if size not in self.pairs]
        if missing:
            raise DatasetError(f"pair pool has no patches of size {missing}")
        return PairPool({size: self.pairs[size] for size in sizes}, seed=self.seed)

    @classmethod
    async def build(
        cls,
        images: Dict[str, ImageBuffer],
        codec: "BaseCodec",
        qp: int,
        patch_sizes: Sequence[int],
        pairs_per_image: int,
        seed: int = 0,
        workdir: Optional[Path] = None,
        workers: Optional[int] = None,
    ) -> "PairPool":
        """Crop seeded patches from every image at every size that fits and degrade them."""
        jobs: List[Tuple[int, ImageBuffer]] = []
        for name in sorted(images):
            image = images[name]
            for size in patch_sizes:
                if image.height < size or image.width < size:
                    continue
                for index in range(pairs_per_image):
                    rng = derive_rng(seed, "patch", name, size, index)
                    jobs.append((size, sample_patch(image, size, rng)))
        if not jobs:
            raise DatasetError(f"no training image is large enough for patch sizes {list(patch_sizes)}")

        semaphore = asyncio.Semaphore(workers or settings.CODEC_WORKERS)

        async def _pair(patch: ImageBuffer) -> Tuple[ImageBuffer, ImageBuffer]:
            async with semaphore:
                return await make_pair(patch, codec, qp, workdir)

        results = await asyncio.gather(*(_pair(patch) for _, patch in jobs))
        pairs: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = {}
        for (size, _), (degraded, gt) in zip(jobs, results):
            pairs.setdefault(size, []).append((degraded.pixels, gt.pixels))
        logger.info(
            f"Pair pool: {len(jobs)} pair(s) from {len(images)} image(s) at qp {qp}, "
            f"sizes {sorted(pairs)}"
        )
        return cls(pairs, seed=seed)

    def batch(self, iteration: int, batch_size: int) -> Tuple[Tensor, Tensor]:
        """(degraded, gt) N x 3 x S x S tensors for ``iteration``."""
        rng = derive_rng(self.seed, "batch", iteration)
        size = self.sizes[int(rng.integers(0, len(self.sizes)))]
        items = self.pairs[size]
        degraded, gt = [], []
        for index in rng.integers(0, len(items), size=batch_size):
            k = int(rng.integers(0, 4))
            source, target = items[int(index)]
            degraded.append(rotate90(source, k))
            gt.append(rotate90(target, k))
        return stack_batch(degraded), stack_batch(gt)


class BatchPrefetcher:
    """Assemble up to ``depth`` future batches in worker threads.

    Batches are yielded strictly in iteration order regardless of which
    thread finishes first.
    """

    def __init__(self, pool: PairPool, batch_size: int, depth: Optional[int] = None):
        self.pool = pool
        self.batch_size = batch_size
        self.depth = max(1, depth or settings.PREFETCH_DEPTH)
        self._executor: Optional[ThreadPoolExecutor] = None

    def __enter__(self) -> "BatchPrefetcher":
        self._executor = ThreadPoolExecutor(max_workers=self.depth, thread_name_prefix="acpp-batch")
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None

    def iterate(self, start: int, stop: int) -> Iterator[Tuple[int, Tuple[Tensor, Tensor]]]:
        if self._executor is None:
            raise RuntimeError("BatchPrefetcher must be used as a context manager")
        queue: Deque[Tuple[int, Future]] = deque()
        next_iteration = start
        while next_iteration < stop or queue:
            while next_iteration < stop and len(queue) < self.depth:
                queue.append(
                    (next_iteration, self._executor.submit(self.pool.batch, next_iteration, self.batch_size))
                )
                next_iteration += 1
            iteration, future = queue.popleft()
            yield iteration, future.result()


async def build_pairs(
    images: Dict[str, ImageBuffer],
    codec: "BaseCodec",
    qp: int,
    workdir: Optional[Path] = None,
    workers: Optional[int] = None,
) -> List[ImagePair]:
    """Degrade whole images (validation / evaluation), keeping the bit counts."""
    from ..codecs.orchestrator import run_jobs

    results = await run_jobs(images, codec, [qp], workdir, workers)
    return [
        ImagePair(name=name, degraded=results[(name, qp)].decoded, gt=images[name], bits=results[(name, qp)].bits)
        for name in sorted(images)
    ]


def load_images(paths: Sequence[str]) -> Dict[str, ImageBuffer]:
    return {path: load_image(path) for path in paths}
