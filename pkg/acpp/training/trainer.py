"""Two-phase training loop."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..data.dataset import BatchPrefetcher, ImagePair
from ..engine import Graph, Tensor
from ..errors import DatasetError, NonFiniteError
from ..metrics import compute_loss
from ..models import HistoryEntry, Phase, TrainConfig
from ..network.checkpoint import save_checkpoint
from ..network.model import ModelParameters, model_forward
from .evaluation import validation_metrics
from .optimizer import AdamState, adam_step

logger = logging.getLogger(__name__)

HISTORY_HEADER = "iteration,phase,loss,val_psnr,val_msssim"


class PairProvider(Protocol):
    """Anything that yields the (degraded, gt) batch for an iteration."""

    def batch(self, iteration: int, batch_size: int) -> Tuple[Tensor, Tensor]:
        ...


@dataclass
class TrainResult:
    """Trained parameters, per-iteration history and written checkpoints."""

    params: ModelParameters
    history: List[HistoryEntry] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss


def _history_row(entry: HistoryEntry) -> str:
    def cell(value: Optional[float]) -> str:
        return "" if value is None else f"{value:.6f}"

    return (
        f"{entry.iteration},{entry.phase.value},{entry.loss:.8f},"
        f"{cell(entry.val_psnr)},{cell(entry.val_msssim)}"
    )


def format_history(history: Sequence[HistoryEntry]) -> str:
    return "\n".join([HISTORY_HEADER] + [_history_row(entry) for entry in history]) + "\n"


def write_history(history: Sequence[HistoryEntry], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_history(history), encoding="utf-8")


class HistoryLog:
    """history.csv kept current on disk: rows are appended at each validation point."""

    def __init__(self, path: Optional[Path]):
        self.path = path
        self.written = 0
        if path is not None:
            write_history([], path)

    def flush(self, history: Sequence[HistoryEntry]) -> None:
        if self.path is None or self.written == len(history):
            return
        with self.path.open("a", encoding="utf-8") as handle:
            for entry in history[self.written :]:
                handle.write(_history_row(entry) + "\n")
        self.written = len(history)


def _checkpoint(
    params: ModelParameters,
    output_dir: Optional[Path],
    filename: str,
    iteration: int,
    phase: Phase,
    written: List[str],
) -> None:
    if output_dir is None:
        return
    path = output_dir / filename
    save_checkpoint(params, path, metadata={"iteration": iteration, "phase": phase.value})
    written.append(str(path))


def train(
    config: TrainConfig,
    params: ModelParameters,
    dataset: PairProvider,
    validation: Optional[Sequence[ImagePair]] = None,
    output_dir: Optional[Union[str, Path]] = None,
    prefetch_depth: Optional[int] = None,
) -> TrainResult:
    """Optimize ``params`` in place for ``config.total_iterations`` steps.

    Iterations are 0-based; those before ``phase_switch_iteration`` use the
    MAE objective and the rest the combined one. Validation and a checkpoint
    happen every ``validation_interval`` iterations and at the end. A
    non-finite loss writes ``diagnostic.ckpt`` and raises.
    """
    output_dir = Path(output_dir) if output_dir is not None else None
    state = AdamState.create(params, config.optimizer)
    result = TrainResult(params=params)
    history_log = HistoryLog(output_dir / "history.csv" if output_dir is not None else None)

    logger.info(
        f"Training {config.total_iterations} iteration(s), batch {config.batch_size}, "
        f"phase switch at {config.phase_switch_iteration}"
    )
    with BatchPrefetcher(dataset, config.batch_size, depth=prefetch_depth) as prefetcher:
        for iteration, (degraded, gt) in prefetcher.iterate(0, config.total_iterations):
            if degraded.shape != gt.shape:
                raise DatasetError(f"batch {iteration}: degraded {degraded.shape} vs ground truth {gt.shape}")
            phase = config.phase_at(iteration)
            if iteration == config.phase_switch_iteration:
                logger.info(f"Iteration {iteration}: switching to the combined MAE + MS-SSIM objective")

            params.zero_grad()
            with Graph() as graph:
                terms = compute_loss(model_forward(params, degraded), gt, config.loss, phase)
            loss = terms.total.item()
            if not math.isfinite(loss):
                history_log.flush(result.history)
                _checkpoint(params, output_dir, "diagnostic.ckpt", iteration, phase, result.checkpoints)
                raise NonFiniteError(f"non-finite loss {loss} at iteration {iteration}")

            graph.backward(terms.total, leaves=params.tensors.values())
            grads: Dict[str, np.ndarray] = {name: t.grad for name, t in params.tensors.items()}
            adam_step(params, grads, state)

            entry = HistoryEntry(iteration=iteration, phase=phase, loss=loss, mae=terms.mae, ms_ssim=terms.ms_ssim)
            result.history.append(entry)
            last = iteration == config.total_iterations - 1
            if (iteration + 1) % config.validation_interval == 0 or last:
                if validation:
                    entry.val_psnr, entry.val_msssim = validation_metrics(
                        params, validation, config.loss, ensemble=config.ensemble_validation
                    )
                    logger.info(
                        f"Iteration {iteration}: loss {loss:.6f}, "
                        f"val PSNR {entry.val_psnr:.4f} dB, val MS-SSIM {entry.val_msssim:.6f}"
                    )
                filename = "final.ckpt" if last else f"iter_{iteration + 1:06d}.ckpt"
                _checkpoint(params, output_dir, filename, iteration, phase, result.checkpoints)
                history_log.flush(result.history)
            else:
                logger.debug(f"Iteration {iteration} ({phase.value}): loss {loss:.6f}")

    return result


class SweepRow(BaseModel):
    patch_size: int
    val_psnr: float
    val_msssim: float
    final_loss: float


class SweepResult(BaseModel):
    """Validation quality of one short run per patch size."""
    rows: List[SweepRow] = Field(default_factory=list)
    best_size: Optional[int] = None


def crop_size_sweep(
    config: TrainConfig,
    initial: ModelParameters,
    pool,
    validation: Sequence[ImagePair],
    sizes: Optional[Sequence[int]] = None,
    output_dir: Optional[Union[str, Path]] = None,
) -> SweepResult:
    """Train a copy of ``initial`` on each patch size alone and compare validation quality.

    Every run starts from the same weights and seed; the best size has the
    highest validation PSNR, ties going to MS-SSIM.
    """
    if not validation:
        raise DatasetError("crop size sweep needs a validation set")
    sizes = list(sizes or pool.sizes)
    result = SweepResult()
    for size in sizes:
        run_config = config.model_copy(update={"patch_sizes": [size]})
        run_dir = Path(output_dir) / f"size_{size}" if output_dir is not None else None
        trained = train(run_config, initial.astype(initial.dtype), pool.restricted([size]), output_dir=run_dir)
        val_psnr, val_msssim = validation_metrics(
            trained.params, validation, config.loss, ensemble=config.ensemble_validation
        )
        result.rows.append(
            SweepRow(patch_size=size, val_psnr=val_psnr, val_msssim=val_msssim, final_loss=trained.final_loss)
        )
        logger.info(f"Crop size {size}: val PSNR {val_psnr:.4f} dB, val MS-SSIM {val_msssim:.6f}")

    best = max(result.rows, key=lambda row: (row.val_psnr, row.val_msssim, -row.patch_size))
    result.best_size = best.patch_size
    return result
