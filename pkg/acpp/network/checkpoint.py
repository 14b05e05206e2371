"""Binary checkpoint persistence.

Layout::

    b"ACPP" | u16 version | u32 header length | UTF-8 JSON header | float32 LE data

The header holds the model config, the creation seed, optional run metadata
and the ordered parameter manifest (name, shape). Data follows in manifest
order.
"""

import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..engine import Tensor
from ..errors import CheckpointError
from ..models import ModelConfig
from .model import ModelParameters, parameter_shapes

logger = logging.getLogger(__name__)

MAGIC = b"ACPP"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")
_DATA_DTYPE = np.dtype("<f4")


def checkpoint_bytes(params: ModelParameters, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    manifest = [{"name": name, "shape": list(t.shape)} for name, t in params.tensors.items()]
    header = json.dumps(
        {
            "config": params.config.model_dump(),
            "seed": params.seed,
            "metadata": metadata or {},
            "parameters": manifest,
        },
        sort_keys=True,
    ).encode("utf-8")
    chunks = [_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)), header]
    for tensor in params.tensors.values():
        chunks.append(np.ascontiguousarray(tensor.data, dtype=_DATA_DTYPE).tobytes())
    return b"".join(chunks)


def save_checkpoint(
    params: ModelParameters,
    path: Union[str, Path],
    metadata: Optional[Dict[str, Any]] = None,
) -> None:
    """Write ``params`` (and its config) to ``path``, replacing any previous file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(checkpoint_bytes(params, metadata))
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"{path}: cannot write checkpoint ({e})") from e
    logger.info(f"Checkpoint written: {path}")


def parse_checkpoint(blob: bytes, source: str = "<checkpoint>") -> Tuple[ModelParameters, ModelConfig, Dict[str, Any]]:
    if len(blob) < _PREAMBLE.size:
        raise CheckpointError(f"{source}: truncated preamble")
    magic, version, header_length = _PREAMBLE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")

    start = _PREAMBLE.size
    if len(blob) < start + header_length:
        raise CheckpointError(f"{source}: truncated header")
    try:
        header = json.loads(blob[start : start + header_length].decode("utf-8"))
        config = ModelConfig.model_validate(header["config"])
        manifest = header["parameters"]
        seed = int(header["seed"])
    except (ValueError, KeyError, TypeError, ValidationError) as e:
        raise CheckpointError(f"{source}: malformed header ({e})") from e

    expected = parameter_shapes(config)
    if [entry["name"] for entry in manifest] != list(expected) or any(
        tuple(entry["shape"]) != expected[entry["name"]] for entry in manifest
    ):
        raise CheckpointError(f"{source}: parameter manifest does not match the stored config")

    offset = start + header_length
    tensors: Dict[str, Tensor] = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        end = offset + count * _DATA_DTYPE.itemsize
        if end > len(blob):
            raise CheckpointError(f"{source}: truncated data at {entry['name']}")
        data = np.frombuffer(blob, dtype=_DATA_DTYPE, count=count, offset=offset)
        tensors[entry["name"]] = Tensor(
            data.astype(np.float32).reshape(shape), requires_grad=True, name=entry["name"]
        )
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{source}: {len(blob) - offset} trailing bytes")

    params = ModelParameters(config=config, seed=seed, tensors=tensors)
    return params, config, header.get("metadata", {})


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelParameters, ModelConfig]:
    """Read a checkpoint; any format problem raises :class:`CheckpointError`."""
    params, config, _ = load_checkpoint_with_metadata(path)
    return params, config


def load_checkpoint_with_metadata(
    path: Union[str, Path],
) -> Tuple[ModelParameters, ModelConfig, Dict[str, Any]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e})") from e
    return parse_checkpoint(blob, str(path))
