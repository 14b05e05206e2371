"""Attention residual post-processing network."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..engine import (
    DEFAULT_DTYPE,
    Tensor,
    activation,
    add,
    channel_reduce,
    concat,
    conv2d,
    global_avg_pool,
    mul,
)
from ..errors import ConstructionError, TensorShapeError
from ..models import ModelConfig
from ..utils import derive_rng

logger = logging.getLogger(__name__)

IMAGE_CHANNELS = 3


@dataclass
class ModelParameters:
    """Named parameter tensors of one network instance.

    Names enumerate in construction order: ``head``, ``body.0`` ...
    ``body.{n-1}``, ``tail``.
    """

    config: ModelConfig
    seed: int
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> List[str]:
        return list(self.tensors)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self.tensors.items())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def arrays(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter array, keyed by name."""
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def astype(self, dtype) -> "ModelParameters":
        """Independent copy with every parameter cast to ``dtype``."""
        tensors = {
            name: Tensor(t.data.astype(dtype, copy=True), requires_grad=True, name=name)
            for name, t in self.tensors.items()
        }
        return ModelParameters(config=self.config, seed=self.seed, tensors=tensors)


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Every parameter name and its shape, in enumeration order."""
    f = config.feature_channels
    reduced = f // config.ca_reduction
    k = config.sa_kernel
    shapes: Dict[str, Tuple[int, ...]] = {
        "head.weight": (f, IMAGE_CHANNELS, 3, 3),
        "head.bias": (f,),
    }
    for i in range(config.num_blocks):
        prefix = f"body.{i}"
        shapes[f"{prefix}.conv1.weight"] = (f, f, 3, 3)
        shapes[f"{prefix}.conv1.bias"] = (f,)
        shapes[f"{prefix}.conv2.weight"] = (f, f, 3, 3)
        shapes[f"{prefix}.conv2.bias"] = (f,)
        shapes[f"{prefix}.ca.reduce.weight"] = (reduced, f, 1, 1)
        shapes[f"{prefix}.ca.reduce.bias"] = (reduced,)
        shapes[f"{prefix}.ca.expand.weight"] = (f, reduced, 1, 1)
        shapes[f"{prefix}.ca.expand.bias"] = (f,)
        shapes[f"{prefix}.sa.conv.weight"] = (1, 2, k, k)
        shapes[f"{prefix}.sa.conv.bias"] = (1,)
    shapes["tail.weight"] = (IMAGE_CHANNELS, f, 3, 3)
    shapes["tail.bias"] = (IMAGE_CHANNELS,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count of the architecture."""
    f = config.feature_channels
    reduced = f // config.ca_reduction
    k = config.sa_kernel
    head = 9 * IMAGE_CHANNELS * f + f
    block = 2 * (9 * f * f + f) + (f * reduced + reduced) + (reduced * f + f) + (2 * k * k + 1)
    tail = 9 * f * IMAGE_CHANNELS + IMAGE_CHANNELS
    return head + config.num_blocks * block + tail


def _coerce_config(config: Union[ModelConfig, Mapping[str, Any]]) -> ModelConfig:
    if isinstance(config, ModelConfig):
        return config
    try:
        return ModelConfig.model_validate(dict(config))
    except ValidationError as e:
        raise ConstructionError(f"invalid model config: {e.errors()[0]['msg']}") from e


def init_model(
    config: Union[ModelConfig, Mapping[str, Any]],
    seed: int = 0,
    dtype=DEFAULT_DTYPE,
) -> ModelParameters:
    """Build a network with seeded uniform fan-in weights and zero biases.

    Each weight draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) using a
    generator derived from (seed, parameter name), so one layer's values do
    not depend on how many layers precede it.
    """
    config = _coerce_config(config)
    tensors: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias") or (config.identity_init and name.startswith("tail.")):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            data = derive_rng(seed, "init", name).uniform(-bound, bound, size=shape).astype(dtype)
        tensors[name] = Tensor(data, requires_grad=True, name=name)

    params = ModelParameters(config=config, seed=seed, tensors=tensors)
    logger.debug(
        f"Initialized model: {config.num_blocks} blocks, F={config.feature_channels}, "
        f"{params.num_parameters()} parameters, seed {seed}"
    )
    return params


def _check_features(features: Tensor, channels: int, where: str) -> None:
    if features.ndim != 4 or features.shape[1] != channels:
        raise TensorShapeError(f"{where} expects N x {channels} x H x W features, got {features.shape}")


def channel_attention(features: Tensor, params: ModelParameters, prefix: str) -> Tensor:
    """Scale each feature channel by a gate computed from its global mean."""
    reduce_w = params[f"{prefix}.reduce.weight"]
    _check_features(features, reduce_w.shape[1], "channel attention")
    squeezed = global_avg_pool(features)
    hidden = activation(conv2d(squeezed, reduce_w, params[f"{prefix}.reduce.bias"], padding=0), "relu")
    gate = activation(
        conv2d(hidden, params[f"{prefix}.expand.weight"], params[f"{prefix}.expand.bias"], padding=0),
        "sigmoid",
    )
    return mul(features, gate)


def spatial_attention(features: Tensor, params: ModelParameters, prefix: str) -> Tensor:
    """Scale every pixel by a gate computed from channel-pooled maps."""
    if features.ndim != 4:
        raise TensorShapeError(f"spatial attention expects N x F x H x W features, got {features.shape}")
    pooled = concat([channel_reduce(features, "mean"), channel_reduce(features, "max")], axis=1)
    gate = activation(conv2d(pooled, params[f"{prefix}.conv.weight"], params[f"{prefix}.conv.bias"]), "sigmoid")
    return mul(features, gate)


def attention_block(features: Tensor, params: ModelParameters, index: int) -> Tensor:
    prefix = f"body.{index}"
    x = conv2d(features, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"])
    x = activation(x, "relu")
    x = conv2d(x, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"])
    x = channel_attention(x, params, f"{prefix}.ca")
    x = spatial_attention(x, params, f"{prefix}.sa")
    return add(features, x)


def model_forward(params: ModelParameters, image: Tensor) -> Tensor:
    """Map N x 3 x H x W degraded images to restored images of the same shape.

    No clamping is applied here; inference helpers clamp, training does not.
    """
    config = params.config
    _check_features(image, IMAGE_CHANNELS, "model_forward")
    height, width = image.shape[2], image.shape[3]
    if height < config.sa_kernel or width < config.sa_kernel:
        raise TensorShapeError(
            f"input {height}x{width} is smaller than the {config.sa_kernel}x{config.sa_kernel} attention kernel"
        )

    x = conv2d(image, params["head.weight"], params["head.bias"])
    for index in range(config.num_blocks):
        x = attention_block(x, params, index)
    out = conv2d(x, params["tail.weight"], params["tail.bias"])
    if config.global_skip:
        out = add(image, out)
    return out
