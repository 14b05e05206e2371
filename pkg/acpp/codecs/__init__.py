"""Codecs and the orchestration around them."""

from typing import Dict, Optional, Tuple, Type

from ..errors import ConfigError
from ..models import CodecSpec
from .base import BaseCodec, CodecResult
from .builtin import BuiltinDctCodec, builtin_dct_degrader
from .external import ExternalCodec
from .lossless import LosslessCodec
from .orchestrator import (
    compute_bpp,
    format_plan,
    measure_size_table,
    plan_rates,
    rate_target_plan,
    run_codec,
    run_jobs,
    write_plan,
)

ALL_CODECS: Dict[str, Type[BaseCodec]] = {
    "builtin": BuiltinDctCodec,
    "lossless": LosslessCodec,
    "external": ExternalCodec,
}


def get_codec(
    name: str,
    spec: Optional[CodecSpec] = None,
    qp_range: Optional[Tuple[int, int]] = None,
) -> BaseCodec:
    """Instantiate a registered codec by name."""
    if name not in ALL_CODECS:
        raise ConfigError(f"unknown codec {name!r}; choose one of {', '.join(ALL_CODECS)}")
    if name == "external":
        if spec is None:
            raise ConfigError("the external codec needs a [codec] section")
        return ExternalCodec(spec)
    if name == "lossless" and qp_range is not None:
        return LosslessCodec(qp_range)
    return ALL_CODECS[name]()


__all__ = [
    "ALL_CODECS",
    "BaseCodec",
    "BuiltinDctCodec",
    "CodecResult",
    "ExternalCodec",
    "LosslessCodec",
    "builtin_dct_degrader",
    "compute_bpp",
    "format_plan",
    "get_codec",
    "measure_size_table",
    "plan_rates",
    "rate_target_plan",
    "run_codec",
    "run_jobs",
    "write_plan",
]
