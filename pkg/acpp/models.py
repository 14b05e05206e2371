"""Pydantic models for the post-processing pipeline."""

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Standard MS-SSIM reference weights, finest scale first. The four-digit
# values sum to 1.0001 and are rescaled to sum to 1.
_REFERENCE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_WEIGHTS = [w / math.fsum(_REFERENCE_WEIGHTS) for w in _REFERENCE_WEIGHTS]

# Crop sizes used to build training patches.
PATCH_SIZES = (64, 128, 256)


class Phase(str, Enum):
    """Training objective phase."""
    MAE_ONLY = "mae_only"
    COMBINED = "combined"


class EvalVariant(str, Enum):
    """Rows of the evaluation table."""
    BASELINE = "baseline"            # decoded codec output, no post-processing
    POST = "post"                    # network output
    POST_ROTATION = "post+rotation"  # rotation self-ensemble


class ModelConfig(BaseModel):
    """Shape of the attention residual network.

    With ``identity_init`` the tail convolution starts at zero, so the
    untrained model returns its input unchanged.
    """
    model_config = ConfigDict(extra="forbid")

    num_blocks: int = 30
    feature_channels: int = 64
    ca_reduction: int = 16
    sa_kernel: int = 7
    global_skip: bool = True
    identity_init: bool = False

    @model_validator(mode="after")
    def _check_shape(self) -> "ModelConfig":
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.feature_channels < 1 or self.ca_reduction < 1:
            raise ValueError("feature_channels and ca_reduction must be positive")
        if self.feature_channels % self.ca_reduction != 0:
            raise ValueError(
                f"feature_channels {self.feature_channels} is not divisible by ca_reduction {self.ca_reduction}"
            )
        if self.sa_kernel < 1 or self.sa_kernel % 2 == 0:
            raise ValueError(f"sa_kernel must be a positive odd number, got {self.sa_kernel}")
        return self


class LossConfig(BaseModel):
    """Objective weights and SSIM constants."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lambda_: float = Field(0.05, alias="lambda")
    num_scales: int = 5
    scale_weights: List[float] = Field(default_factory=lambda: list(MS_SSIM_WEIGHTS))
    k1: float = 0.01
    k2: float = 0.03
    window_size: int = 11
    window_sigma: float = 1.5
    peak: float = 1.0

    @field_validator("scale_weights", mode="before")
    @classmethod
    def _split_weights(cls, value):
        if isinstance(value, str):
            return [float(part) for part in value.split(",") if part.strip()]
        return value

    @model_validator(mode="after")
    def _check_weights(self) -> "LossConfig":
        if self.num_scales < 1:
            raise ValueError(f"num_scales must be >= 1, got {self.num_scales}")
        if len(self.scale_weights) != self.num_scales:
            raise ValueError(
                f"scale_weights has {len(self.scale_weights)} entries, expected {self.num_scales}"
            )
        if any(w <= 0 for w in self.scale_weights):
            raise ValueError("scale_weights must all be positive")
        if abs(math.fsum(self.scale_weights) - 1.0) > 1e-9:
            raise ValueError(f"scale_weights must sum to 1, got {math.fsum(self.scale_weights)!r}")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.window_sigma <= 0 or self.peak <= 0:
            raise ValueError("window_sigma and peak must be positive")
        return self


class OptimizerConfig(BaseModel):
    """Adam hyperparameters (beta1 = 0, no momentum)."""
    model_config = ConfigDict(extra="forbid")

    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    epsilon: float = 1e-8


class TrainConfig(BaseModel):
    """Two-phase training schedule."""
    model_config = ConfigDict(extra="forbid")

    phase_switch_iteration: int = 10000
    total_iterations: int = 20000
    batch_size: int = 16
    patch_sizes: List[int] = Field(default_factory=lambda: list(PATCH_SIZES))
    seed: int = 0
    validation_interval: int = 1000
    qp: int = 5  # codec quality parameter used to degrade training patches
    pairs_per_image: int = 8
    ensemble_validation: bool = False
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    loss: LossConfig = Field(default_factory=LossConfig)

    @field_validator("patch_sizes", mode="before")
    @classmethod
    def _split_sizes(cls, value):
        if isinstance(value, str):
            return [int(part) for part in value.split(",") if part.strip()]
        return value

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.total_iterations < 1 or self.batch_size < 1 or self.pairs_per_image < 1:
            raise ValueError("total_iterations, batch_size and pairs_per_image must be positive")
        if self.phase_switch_iteration > self.total_iterations:
            raise ValueError(
                f"phase_switch_iteration {self.phase_switch_iteration} exceeds "
                f"total_iterations {self.total_iterations}"
            )
        if not self.patch_sizes or any(size < 1 for size in self.patch_sizes):
            raise ValueError(f"patch_sizes must be a non-empty list of positive sizes, got {self.patch_sizes}")
        if self.validation_interval < 1:
            raise ValueError("validation_interval must be positive")
        return self

    def phase_at(self, iteration: int) -> Phase:
        """Phase used for the 0-based ``iteration``."""
        return Phase.MAE_ONLY if iteration < self.phase_switch_iteration else Phase.COMBINED


class CodecSpec(BaseModel):
    """External codec driven through command templates."""
    model_config = ConfigDict(extra="forbid")

    name: str
    encode_template: str
    decode_template: str
    qp_range: Tuple[int, int]
    size_decreases_with_qp: bool = True
    input_suffix: str = ".png"
    bitstream_suffix: str = ".bin"
    output_suffix: str = ".png"

    @field_validator("qp_range", mode="before")
    @classmethod
    def _split_range(cls, value):
        if isinstance(value, str):
            low, high = value.split(",")
            return int(low), int(high)
        return value

    @model_validator(mode="after")
    def _check_templates(self) -> "CodecSpec":
        for field, required in (
            ("encode_template", ("{input}", "{output}", "{qp}")),
            ("decode_template", ("{input}", "{output}")),
        ):
            template = getattr(self, field)
            for placeholder in required:
                count = template.count(placeholder)
                if count != 1:
                    raise ValueError(f"{field} must contain {placeholder} exactly once (found {count})")
        if self.qp_range[0] > self.qp_range[1]:
            raise ValueError(f"qp_range {self.qp_range} is empty")
        return self


class SizeTable(BaseModel):
    """Measured bits (and decoded PSNR) for every (image, qp) job."""
    images: List[str] = Field(default_factory=list)
    pixels: Dict[str, int] = Field(default_factory=dict)
    bits: Dict[str, Dict[int, int]] = Field(default_factory=dict)
    psnr: Dict[str, Dict[int, float]] = Field(default_factory=dict)

    def qps(self) -> List[int]:
        found = {qp for per_image in self.bits.values() for qp in per_image}
        return sorted(found)

    def dataset_bpp(self, assignment: Dict[str, int]) -> float:
        total_bits = sum(self.bits[name][qp] for name, qp in assignment.items())
        total_pixels = sum(self.pixels[name] for name in assignment)
        return total_bits / total_pixels


class RatePlan(BaseModel):
    """Per-image qp assignment meeting a dataset bpp budget."""
    assignments: Dict[str, int] = Field(default_factory=dict)
    measured_bits: Dict[str, Dict[int, int]] = Field(default_factory=dict)
    per_image_bpp: Dict[str, float] = Field(default_factory=dict)
    achieved_bpp: float = 0.0
    target_bpp: float = 0.15
    base_qp: Optional[int] = None


class DatasetSplit(BaseModel):
    """Disjoint train/validation partition of a dataset manifest."""
    train: List[str] = Field(default_factory=list)
    validation: List[str] = Field(default_factory=list)
    seed: int = 0
    ratio: float = 0.9


class HistoryEntry(BaseModel):
    """One training iteration in the history file."""
    iteration: int
    phase: Phase
    loss: float
    mae: float
    ms_ssim: Optional[float] = None
    val_psnr: Optional[float] = None
    val_msssim: Optional[float] = None


class MetricRow(BaseModel):
    """One image (or the mean) under one evaluation variant."""
    image: str
    variant: EvalVariant
    psnr: float
    ms_ssim: float
    bpp: Optional[float] = None


class EvaluationTable(BaseModel):
    """Per-image metrics plus arithmetic means per variant."""
    rows: List[MetricRow] = Field(default_factory=list)
    means: List[MetricRow] = Field(default_factory=list)

    def mean_of(self, variant: EvalVariant) -> Optional[MetricRow]:
        for row in self.means:
            if row.variant == variant:
                return row
        return None


class AppConfig(BaseModel):
    """Experiment configuration file, one section per nested model."""
    model_config = ConfigDict(extra="forbid")

    manifest: Optional[str] = None
    codec: str = "builtin"  # builtin | lossless | external
    codec_spec: Optional[CodecSpec] = None
    qp_window: Tuple[int, int] = (0, 9)
    target_bpp: float = 0.15
    output_dir: str = "./runs/default"
    seed: int = 0
    ensemble: bool = False
    split_ratio: float = 0.9
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @field_validator("qp_window", mode="before")
    @classmethod
    def _split_window(cls, value):
        if isinstance(value, str):
            low, high = value.split(",")
            return int(low), int(high)
        return value

    @model_validator(mode="after")
    def _check_codec(self) -> "AppConfig":
        if self.codec not in ("builtin", "lossless", "external"):
            raise ValueError(f"codec must be builtin, lossless or external, got {self.codec!r}")
        if self.codec == "external" and self.codec_spec is None:
            raise ValueError("codec = external needs a [codec] section")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.target_bpp <= 0:
            raise ValueError("target_bpp must be positive")
        if "seed" not in self.train.model_fields_set:
            # [train] seed follows the run seed unless set explicitly
            self.train.seed = self.seed
        return self

    @property
    def loss(self) -> LossConfig:
        return self.train.loss
