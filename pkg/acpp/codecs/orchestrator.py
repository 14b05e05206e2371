"""Codec job scheduling, size measurement and rate-target planning."""

import asyncio
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from ..config import settings
from ..data.images import ImageBuffer, load_image
from ..errors import ConfigError, ContractError, RatePlanError
from ..metrics.quality import psnr
from ..models import RatePlan, SizeTable
from .base import BaseCodec, CodecResult

logger = logging.getLogger(__name__)

Images = Union[Dict[str, ImageBuffer], Iterable[Union[str, Path]]]


async def run_codec(
    image_path: Union[str, Path],
    qp: int,
    codec: BaseCodec,
    workdir: Optional[Union[str, Path]] = None,
) -> Tuple[ImageBuffer, int]:
    """Encode and decode one image file; returns (decoded image, bits)."""
    image = load_image(image_path)
    result = await codec.degrade(image, qp, Path(workdir) if workdir else None)
    return result.decoded, result.bits


def _as_image_map(images: Images) -> Dict[str, ImageBuffer]:
    if isinstance(images, dict):
        return images
    return {str(path): load_image(path) for path in images}


async def run_jobs(
    images: Dict[str, ImageBuffer],
    codec: BaseCodec,
    qps: Iterable[int],
    workdir: Optional[Path] = None,
    workers: Optional[int] = None,
) -> Dict[Tuple[str, int], CodecResult]:
    """Run every (image, qp) job, at most ``workers`` at a time.

    Results are keyed by job, so callers never depend on completion order.
    """
    semaphore = asyncio.Semaphore(workers or settings.CODEC_WORKERS)
    jobs = [(name, qp) for name in sorted(images) for qp in qps]

    async def _job(name: str, qp: int) -> CodecResult:
        async with semaphore:
            return await codec.degrade(images[name], qp, workdir)

    results = await asyncio.gather(*(_job(name, qp) for name, qp in jobs))
    logger.info(f"{codec.name}: completed {len(jobs)} codec job(s) over {len(images)} image(s)")
    return dict(zip(jobs, results))


async def measure_size_table(
    images: Images,
    codec: BaseCodec,
    qps: Iterable[int],
    workdir: Optional[Path] = None,
    workers: Optional[int] = None,
) -> SizeTable:
    """Bits and decoded PSNR for every image at every qp."""
    image_map = _as_image_map(images)
    qps = list(qps)
    results = await run_jobs(image_map, codec, qps, workdir, workers)

    table = SizeTable(images=sorted(image_map))
    for name in table.images:
        image = image_map[name]
        table.pixels[name] = image.num_pixels
        table.bits[name] = {}
        table.psnr[name] = {}
        for qp in qps:
            result = results[(name, qp)]
            table.bits[name][qp] = result.bits
            table.psnr[name][qp] = psnr(result.decoded, image)
    return table


def compute_bpp(
    bits: Dict[str, int],
    dims: Dict[str, Tuple[int, int]],
) -> Tuple[Dict[str, float], float]:
    """Per-image bpp and dataset bpp (total bits / total pixels)."""
    per_image = {}
    total_bits = 0
    total_pixels = 0
    for name, count in bits.items():
        height, width = dims[name]
        if height <= 0 or width <= 0:
            raise ContractError(f"{name}: dimensions must be positive, got {height}x{width}")
        per_image[name] = count / (height * width)
        total_bits += count
        total_pixels += height * width
    return per_image, total_bits / total_pixels


def check_monotone(table: SizeTable, qps: List[int]) -> None:
    """Bits must be non-increasing in qp for every image."""
    for name in table.images:
        for low, high in zip(qps, qps[1:]):
            if table.bits[name][high] > table.bits[name][low]:
                raise RatePlanError(
                    f"{name}: size grows from qp {low} ({table.bits[name][low]} bits) "
                    f"to qp {high} ({table.bits[name][high]} bits)",
                    violating_pair=(name, low, high),
                )


def _gain_per_bit(table: SizeTable, name: str, current: int, upgraded: int) -> float:
    added = table.bits[name][upgraded] - table.bits[name][current]
    if added <= 0:
        return float("inf")
    quality = table.psnr.get(name, {})
    if current not in quality or upgraded not in quality:
        return 0.0
    return (quality[upgraded] - quality[current]) / added


def plan_rates(
    table: SizeTable,
    target_bpp: float,
    search_window: Optional[Tuple[int, int]] = None,
    mix_span: int = 2,
    allow_wide_mix: bool = False,
) -> RatePlan:
    """Mix adjacent qps so the dataset bpp gets as close to ``target_bpp`` as allowed.

    1. Take the smallest qp whose all-images dataset bpp is within budget.
    2. Move images one step down in qp (more bits), best PSNR gain per added
       bit first, ties by image name, while the budget still holds.
    3. Swap one upgraded image for a not-upgraded one when that raises the
       dataset bpp without leaving the budget.

    ``mix_span`` is the number of distinct qps a plan may use; 3 needs
    ``allow_wide_mix``.
    """
    if mix_span not in (2, 3):
        raise ConfigError(f"mix_span must be 2 or 3, got {mix_span}")
    if mix_span == 3 and not allow_wide_mix:
        raise ConfigError("a three-qp mix needs allow_wide_mix=True")
    if not table.images:
        raise RatePlanError("no images to plan")

    qps = table.qps()
    if search_window is not None:
        qps = [qp for qp in qps if search_window[0] <= qp <= search_window[1]]
    if not qps:
        raise RatePlanError(f"no measured qp inside the search window {search_window}")
    check_monotone(table, qps)

    def dataset_bpp(qp: int) -> float:
        return table.dataset_bpp({name: qp for name in table.images})

    base_qp = next((qp for qp in qps if dataset_bpp(qp) <= target_bpp), None)
    if base_qp is None:
        minimum = dataset_bpp(qps[-1])
        raise RatePlanError(
            f"target {target_bpp} bpp is unreachable; minimum achievable is {minimum:.6f} bpp at qp {qps[-1]}",
            min_achievable_bpp=minimum,
        )

    assignments = {name: base_qp for name in table.images}
    total_pixels = sum(table.pixels[name] for name in table.images)
    spent = sum(table.bits[name][base_qp] for name in table.images)

    ladder = [qp for qp in qps if qp < base_qp][::-1][: mix_span - 1]
    for upgraded in ladder:
        current = qps[qps.index(upgraded) + 1]
        candidates = [name for name in table.images if assignments[name] == current]
        candidates.sort(key=lambda name: (-_gain_per_bit(table, name, current, upgraded), name))
        for name in candidates:
            added = table.bits[name][upgraded] - table.bits[name][current]
            if (spent + added) / total_pixels <= target_bpp:
                assignments[name] = upgraded
                spent += added

        spent = _swap_refine(table, assignments, current, upgraded, spent, total_pixels, target_bpp)

    plan = RatePlan(
        assignments=assignments,
        measured_bits={name: dict(table.bits[name]) for name in table.images},
        per_image_bpp={
            name: table.bits[name][qp] / table.pixels[name] for name, qp in assignments.items()
        },
        achieved_bpp=spent / total_pixels,
        target_bpp=target_bpp,
        base_qp=base_qp,
    )
    logger.info(
        f"Rate plan: base qp {base_qp}, {sum(1 for qp in assignments.values() if qp != base_qp)} "
        f"image(s) upgraded, {plan.achieved_bpp:.6f} bpp (target {target_bpp})"
    )
    return plan


def _swap_refine(
    table: SizeTable,
    assignments: Dict[str, int],
    current: int,
    upgraded: int,
    spent: int,
    total_pixels: int,
    target_bpp: float,
) -> int:
    """Swap images between the two qp groups while a swap raises the bpp, largest gain first."""
    def added(name: str) -> int:
        return table.bits[name][upgraded] - table.bits[name][current]

    improved = True
    while improved:
        improved = False
        inside = sorted(name for name, qp in assignments.items() if qp == upgraded)
        outside = sorted(name for name, qp in assignments.items() if qp == current)
        best: Optional[Tuple[int, str, str]] = None
        for out_name in inside:
            for in_name in outside:
                delta = added(in_name) - added(out_name)
                if delta > 0 and (spent + delta) / total_pixels <= target_bpp and (best is None or delta > best[0]):
                    best = (delta, out_name, in_name)
        if best is not None:
            delta, out_name, in_name = best
            assignments[out_name] = current
            assignments[in_name] = upgraded
            spent += delta
            improved = True
    return spent


async def rate_target_plan(
    images: Images,
    codec: BaseCodec,
    target_bpp: float,
    search_window: Tuple[int, int],
    mix_span: int = 2,
    allow_wide_mix: bool = False,
    workdir: Optional[Path] = None,
) -> RatePlan:
    """Measure ``images`` over ``search_window`` and plan a qp per image."""
    low, high = search_window
    if low < codec.qp_range[0] or high > codec.qp_range[1] or low > high:
        raise RatePlanError(f"search window {search_window} is outside the codec range {codec.qp_range}")
    if not codec.size_decreases_with_qp:
        raise RatePlanError(f"{codec.name}: planning needs a codec whose size does not grow with qp")
    table = await measure_size_table(images, codec, range(low, high + 1), workdir)
    return plan_rates(table, target_bpp, search_window, mix_span, allow_wide_mix)


def format_plan(plan: RatePlan) -> str:
    """Plain-text table (path, qp, bits, bpp) plus a summary line."""
    lines = ["path,qp,bits,bpp"]
    for name in sorted(plan.assignments):
        qp = plan.assignments[name]
        lines.append(f"{name},{qp},{plan.measured_bits[name][qp]},{plan.per_image_bpp[name]:.6f}")
    used = sorted(set(plan.assignments.values()))
    lines.append(
        f"# achieved_bpp={plan.achieved_bpp:.6f} target_bpp={plan.target_bpp:.6f} "
        f"images={len(plan.assignments)} qps={'/'.join(str(qp) for qp in used)}"
    )
    return "\n".join(lines) + "\n"


def write_plan(plan: RatePlan, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_plan(plan), encoding="utf-8")
    logger.info(f"Rate plan written: {path}")
