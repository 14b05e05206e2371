"""Shared utility functions."""

import hashlib

import numpy as np


def derive_seed(seed: int, *labels: object) -> int:
    """Derive a stable 32-bit sub-seed from ``seed`` and a label path."""
    key = ":".join([str(seed), *(str(label) for label in labels)])
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:4], "little")


def derive_rng(seed: int, *labels: object) -> np.random.Generator:
    """Random generator seeded from :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(seed, *labels))
