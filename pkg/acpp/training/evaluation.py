"""Validation metrics and the evaluation table."""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from ..data.dataset import ImagePair
from ..errors import DatasetError
from ..metrics import ms_ssim, psnr
from ..models import EvalVariant, EvaluationTable, LossConfig, MetricRow
from ..network.ensemble import restore
from ..network.model import ModelParameters

logger = logging.getLogger(__name__)

CSV_HEADER = "image,variant,psnr,ms_ssim,bpp"


def _score(pair: ImagePair, output, variant: EvalVariant, loss_config: LossConfig) -> MetricRow:
    # Outputs are scored as the 8-bit files they would be saved as.
    output = output.quantized()
    return MetricRow(
        image=pair.name,
        variant=variant,
        psnr=psnr(output, pair.gt),
        ms_ssim=ms_ssim(output, pair.gt, loss_config),
        bpp=pair.bpp,
    )


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def evaluate(
    params: Optional[ModelParameters],
    pairs: Sequence[ImagePair],
    loss_config: Optional[LossConfig] = None,
    ensemble: bool = False,
) -> EvaluationTable:
    """Per-image and mean PSNR / MS-SSIM / bpp for baseline and post-processed outputs.

    ``params=None`` scores the baseline rows only.
    """
    if not pairs:
        raise DatasetError("evaluation set is empty")
    loss_config = loss_config or LossConfig()

    variants = [EvalVariant.BASELINE]
    if params is not None:
        variants.append(EvalVariant.POST)
        if ensemble:
            variants.append(EvalVariant.POST_ROTATION)

    table = EvaluationTable()
    for pair in sorted(pairs, key=lambda p: p.name):
        for variant in variants:
            if variant is EvalVariant.BASELINE:
                output = pair.degraded
            else:
                output = restore(params, pair.degraded, ensemble=variant is EvalVariant.POST_ROTATION)
            table.rows.append(_score(pair, output, variant, loss_config))

    for variant in variants:
        rows = [row for row in table.rows if row.variant == variant]
        bpps = [row.bpp for row in rows if row.bpp is not None]
        table.means.append(
            MetricRow(
                image="mean",
                variant=variant,
                psnr=_mean([row.psnr for row in rows]),
                ms_ssim=_mean([row.ms_ssim for row in rows]),
                bpp=_mean(bpps) if len(bpps) == len(rows) else None,
            )
        )
        logger.info(
            f"{variant.value}: mean PSNR {table.means[-1].psnr:.4f} dB, "
            f"mean MS-SSIM {table.means[-1].ms_ssim:.6f} over {len(rows)} image(s)"
        )
    return table


def validation_metrics(
    params: ModelParameters,
    pairs: Sequence[ImagePair],
    loss_config: LossConfig,
    ensemble: bool = False,
) -> Tuple[float, float]:
    """Mean (PSNR, MS-SSIM) of the post-processed validation images."""
    table = evaluate(params, pairs, loss_config, ensemble=ensemble)
    row = table.mean_of(EvalVariant.POST_ROTATION if ensemble else EvalVariant.POST)
    return row.psnr, row.ms_ssim


def _format(value: Optional[float], digits: int) -> str:
    if value is None:
        return ""
    return f"{value:.{digits}f}"


def format_metrics_csv(table: EvaluationTable) -> str:
    lines: List[str] = [CSV_HEADER]
    for row in table.rows + table.means:
        lines.append(
            f"{row.image},{row.variant.value},{_format(row.psnr, 4)},"
            f"{_format(row.ms_ssim, 6)},{_format(row.bpp, 6)}"
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(table: EvaluationTable, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_metrics_csv(table), encoding="utf-8")
    logger.info(f"Metric table written: {path}")
