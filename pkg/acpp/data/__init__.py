"""Image IO, dataset splits and training pair construction."""

from .dataset import (
    BatchPrefetcher,
    ImagePair,
    PairPool,
    build_pairs,
    load_images,
    make_pair,
    read_manifest,
    read_pairs_manifest,
    sample_patch,
    split_dataset,
    stack_batch,
)
from .images import ImageBuffer, load_image, rotate90, save_image

__all__ = [
    "BatchPrefetcher",
    "ImageBuffer",
    "ImagePair",
    "PairPool",
    "build_pairs",
    "load_image",
    "load_images",
    "make_pair",
    "read_manifest",
    "read_pairs_manifest",
    "rotate90",
    "sample_patch",
    "save_image",
    "split_dataset",
    "stack_batch",
]
