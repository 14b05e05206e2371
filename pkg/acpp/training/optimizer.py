"""Adam with bias correction."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from ..errors import ContractError, NonFiniteError
from ..models import OptimizerConfig
from ..network.model import ModelParameters

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moments per parameter and the step counter."""

    config: OptimizerConfig
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def create(cls, params: ModelParameters, config: OptimizerConfig) -> "AdamState":
        zeros = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}
        return cls(
            config=config,
            m={name: z.copy() for name, z in zeros.items()},
            v=zeros,
        )


def adam_step(
    params: ModelParameters,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> AdamState:
    """Apply one Adam update in place and return ``state``.

    All gradients are validated before any parameter changes.
    """
    for name, tensor in params.tensors.items():
        grad = grads.get(name)
        if grad is None:
            raise ContractError(f"missing gradient for parameter {name}")
        if grad.shape != tensor.shape or state.m[name].shape != tensor.shape:
            raise ContractError(f"gradient/state shape mismatch for {name}: {grad.shape} vs {tensor.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}", parameter=name)

    cfg = state.config
    state.t += 1
    correction1 = 1.0 - cfg.beta1 ** state.t
    correction2 = 1.0 - cfg.beta2 ** state.t
    for name, tensor in params.tensors.items():
        grad = grads[name].astype(tensor.dtype, copy=False)
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * grad
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * grad * grad
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        update = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        tensor.data = (tensor.data - update).astype(tensor.dtype, copy=False)
    return state
