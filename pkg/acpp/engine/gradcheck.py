"""Central finite-difference verification of analytic gradients."""

import logging
from typing import Callable, Dict, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..errors import ContractError, GradientCheckError
from .tensor import Graph, Tensor

logger = logging.getLogger(__name__)

LossBuilder = Callable[[Dict[str, Tensor]], Tensor]


class LeafCheck(BaseModel):
    """Per-leaf outcome of a gradient check."""
    max_relative_error: float = 0.0
    checked: int = 0
    excluded_kinks: int = 0


class GradientCheckReport(BaseModel):
    """Result of :func:`gradient_check`."""
    step: float
    tolerance: float
    leaves: Dict[str, LeafCheck] = Field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max((leaf.max_relative_error for leaf in self.leaves.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def _evaluate(builder: LossBuilder, leaves: Dict[str, Tensor]) -> float:
    return float(builder(leaves).item())


def gradient_check(
    builder: LossBuilder,
    leaves: Dict[str, Tensor],
    step: float = 1e-6,
    tolerance: float = 1e-4,
    max_entries: Optional[int] = None,
    denominator_floor: float = 1e-6,
    kink_threshold: float = 1e-3,
    seed: int = 0,
) -> GradientCheckReport:
    """Compare analytic gradients of ``builder(leaves)`` to central differences.

    Points where the one-sided slopes disagree (a relu or abs kink inside the
    step) are counted as excluded instead of compared. ``max_entries`` limits
    each leaf to a seeded subset of its elements. Leaves should be float64.
    """
    if step <= 0:
        raise ContractError(f"finite-difference step must be positive, got {step}")

    for leaf in leaves.values():
        leaf.data = np.array(leaf.data, copy=True, order="C")
        leaf.requires_grad = True
        leaf.zero_grad()

    with Graph() as graph:
        loss = builder(leaves)
    reference = float(loss.item())
    replay = _evaluate(builder, leaves)
    if replay != reference:
        raise GradientCheckError(
            f"loss builder is not deterministic: {reference!r} then {replay!r}"
        )
    graph.backward(loss, leaves=leaves.values())

    rng = np.random.default_rng(seed)
    report = GradientCheckReport(step=step, tolerance=tolerance)

    for name, leaf in leaves.items():
        analytic = leaf.grad.reshape(-1)
        flat = leaf.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))

        result = LeafCheck()
        for index in indices:
            original = flat[index]
            flat[index] = original + step
            f_plus = _evaluate(builder, leaves)
            flat[index] = original - step
            f_minus = _evaluate(builder, leaves)
            flat[index] = original

            forward_slope = (f_plus - reference) / step
            backward_slope = (reference - f_minus) / step
            jump = abs(forward_slope - backward_slope)
            if jump > kink_threshold and jump > 0.5 * (abs(forward_slope) + abs(backward_slope)):
                result.excluded_kinks += 1
                continue

            numeric = (f_plus - f_minus) / (2.0 * step)
            exact = float(analytic[index])
            denominator = max(abs(exact), abs(numeric), denominator_floor)
            error = abs(exact - numeric) / denominator
            result.max_relative_error = max(result.max_relative_error, error)
            result.checked += 1

        report.leaves[name] = result
        logger.debug(
            f"gradient check {name}: max rel err {result.max_relative_error:.3e} "
            f"over {result.checked} entries, {result.excluded_kinks} kink(s) excluded"
        )

    return report
