"""Command-line interface: train, infer, eval, rateplan and sweep."""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .codecs import get_codec, rate_target_plan, write_plan
from .config import load_app_config, settings
from .data import (
    ImagePair,
    PairPool,
    build_pairs,
    load_image,
    load_images,
    read_manifest,
    read_pairs_manifest,
    save_image,
    split_dataset,
)
from .errors import AcppError, CheckpointError, ConfigError, RatePlanError
from .models import AppConfig
from .network import init_model, load_checkpoint, restore
from .report_generator import render_evaluation_report
from .training import crop_size_sweep, evaluate, train, write_metrics_csv
from .utils import derive_seed

# Setup logger
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3


def _parse_window(value: str) -> Tuple[int, int]:
    try:
        low, high = (int(part) for part in value.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected LOW,HIGH, got {value!r}") from e
    return low, high


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acpp", description="Post-processing of lossy codec output")
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration file")
    common.add_argument("--out", help="output directory (overrides [run] output_dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--ensemble", action="store_true", default=None, help="use the rotation self-ensemble")

    commands.add_parser("train", parents=[common], help="split, build pairs and train")

    infer = commands.add_parser("infer", parents=[common], help="restore decoded images")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("inputs", nargs="+", help="decoded PNG/PPM images")

    evaluate_cmd = commands.add_parser("eval", parents=[common], help="score baseline and post-processed outputs")
    evaluate_cmd.add_argument("--checkpoint", required=True)
    evaluate_cmd.add_argument("--pairs", help="manifest of degraded_path,gt_path[,bits] lines")
    evaluate_cmd.add_argument("--manifest", help="ground-truth manifest to degrade with the configured codec")
    evaluate_cmd.add_argument("--codec", help="codec name (overrides [run] codec)")
    evaluate_cmd.add_argument("--qp", type=int, help="codec qp (overrides [train] qp)")

    rateplan = commands.add_parser("rateplan", parents=[common], help="mix adjacent qps to meet a bpp budget")
    rateplan.add_argument("--manifest", help="image manifest (overrides [run] manifest)")
    rateplan.add_argument("--codec", help="codec name (overrides [run] codec)")
    rateplan.add_argument("--target-bpp", type=float, help=f"dataset bpp budget (default {settings.DEFAULT_TARGET_BPP})")
    rateplan.add_argument("--qp-window", type=_parse_window, help="LOW,HIGH qp search window")
    rateplan.add_argument("--mix-span", type=int, default=2, choices=(2, 3))
    rateplan.add_argument("--allow-wide-mix", action="store_true")

    sweep = commands.add_parser("sweep", parents=[common], help="compare training crop sizes")
    sweep.add_argument("--sizes", help="comma-separated patch sizes (default: [train] patch_sizes)")
    return parser


def load_run_config(args: argparse.Namespace) -> AppConfig:
    """Experiment config from --config (or defaults) with CLI overrides applied."""
    config = load_app_config(args.config) if args.config else AppConfig()
    update = {}
    if args.out:
        update["output_dir"] = args.out
    elif "output_dir" not in config.model_fields_set:
        update["output_dir"] = str(Path(settings.OUTPUT_DIR) / args.command)
    if args.seed is not None:
        update["seed"] = args.seed
        update["train"] = config.train.model_copy(update={"seed": args.seed})
    if args.ensemble is not None:
        update["ensemble"] = args.ensemble
    if getattr(args, "codec", None):
        update["codec"] = args.codec
    return config.model_copy(update=update) if update else config


def _codec_for(config: AppConfig):
    return get_codec(config.codec, config.codec_spec, qp_range=config.qp_window)


def _require_manifest(config: AppConfig, override: Optional[str] = None) -> str:
    manifest = override or config.manifest
    if not manifest:
        raise ConfigError("no dataset manifest given ([run] manifest or --manifest)")
    return manifest


async def _prepare_training(config: AppConfig) -> Tuple[PairPool, List[ImagePair]]:
    paths = read_manifest(_require_manifest(config))
    split = split_dataset(paths, config.split_ratio, config.seed)
    codec = _codec_for(config)
    pool = await PairPool.build(
        load_images(split.train),
        codec,
        config.train.qp,
        config.train.patch_sizes,
        config.train.pairs_per_image,
        seed=derive_seed(config.train.seed, "pool"),
        workdir=Path(settings.WORK_DIR),
    )
    validation = await build_pairs(load_images(split.validation), codec, config.train.qp, Path(settings.WORK_DIR))
    return pool, validation


def cmd_train(config: AppConfig) -> int:
    output_dir = Path(config.output_dir)
    pool, validation = asyncio.run(_prepare_training(config))
    params = init_model(config.model, derive_seed(config.seed, "init"))
    result = train(config.train, params, pool, validation, output_dir=output_dir, prefetch_depth=settings.PREFETCH_DEPTH)
    if validation:
        table = evaluate(result.params, validation, config.loss, ensemble=config.ensemble)
        write_metrics_csv(table, output_dir / "metrics.csv")
    logger.info(f"Training finished: {len(result.checkpoints)} checkpoint(s) in {output_dir}")
    return EXIT_OK


def _load_model(checkpoint: str, config: Optional[AppConfig], explicit_config: bool):
    params, model_config = load_checkpoint(checkpoint)
    if explicit_config and config is not None and config.model != model_config:
        raise CheckpointError(f"{checkpoint}: model config does not match the [model] section of the config file")
    return params


def cmd_infer(config: AppConfig, args: argparse.Namespace) -> int:
    params = _load_model(args.checkpoint, config, bool(args.config))
    output_dir = Path(config.output_dir)
    for source in args.inputs:
        restored = restore(params, load_image(source), ensemble=config.ensemble)
        target = output_dir / Path(source).name
        save_image(restored, target)
        logger.info(f"Restored {source} -> {target}")
    return EXIT_OK


def cmd_eval(config: AppConfig, args: argparse.Namespace) -> int:
    params = _load_model(args.checkpoint, config, bool(args.config))
    if args.pairs:
        pairs = read_pairs_manifest(args.pairs)
        codec_label = "pairs manifest"
    else:
        codec = _codec_for(config)
        qp = args.qp if args.qp is not None else config.train.qp
        images = load_images(read_manifest(_require_manifest(config, args.manifest)))
        pairs = asyncio.run(build_pairs(images, codec, qp, Path(settings.WORK_DIR)))
        codec_label = f"{codec.name} qp {qp}"

    table = evaluate(params, pairs, config.loss, ensemble=config.ensemble)
    output_dir = Path(config.output_dir)
    write_metrics_csv(table, output_dir / "metrics.csv")
    render_evaluation_report(table, output_dir / "report.html", codec=codec_label)
    return EXIT_OK


def cmd_rateplan(config: AppConfig, args: argparse.Namespace) -> int:
    codec = _codec_for(config)
    window = args.qp_window or config.qp_window
    if args.target_bpp is not None:
        target = args.target_bpp
    elif "target_bpp" in config.model_fields_set:
        target = config.target_bpp
    else:
        target = settings.DEFAULT_TARGET_BPP
    if window[0] < codec.qp_range[0] or window[1] > codec.qp_range[1] or window[0] > window[1]:
        raise ConfigError(f"qp window {window} is outside the {codec.name} range {codec.qp_range}")

    paths = read_manifest(_require_manifest(config, args.manifest))
    plan = asyncio.run(
        rate_target_plan(
            paths,
            codec,
            target,
            window,
            mix_span=args.mix_span,
            allow_wide_mix=args.allow_wide_mix,
            workdir=Path(settings.WORK_DIR),
        )
    )
    write_plan(plan, Path(config.output_dir) / "rate_plan.txt")
    return EXIT_OK


def cmd_sweep(config: AppConfig, args: argparse.Namespace) -> int:
    sizes = [int(part) for part in args.sizes.split(",")] if args.sizes else None
    if sizes:
        config = config.model_copy(
            update={"train": config.train.model_copy(update={"patch_sizes": sizes})}
        )
    pool, validation = asyncio.run(_prepare_training(config))
    initial = init_model(config.model, derive_seed(config.seed, "init"))
    output_dir = Path(config.output_dir)
    result = crop_size_sweep(config.train, initial, pool, validation, sizes=sizes, output_dir=output_dir)

    lines = ["patch_size,val_psnr,val_msssim,final_loss"]
    lines += [f"{r.patch_size},{r.val_psnr:.4f},{r.val_msssim:.6f},{r.final_loss:.8f}" for r in result.rows]
    lines.append(f"# best_size={result.best_size}")
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Best crop size: {result.best_size}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_run_config(args)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "infer":
            return cmd_infer(config, args)
        if args.command == "eval":
            return cmd_eval(config, args)
        if args.command == "rateplan":
            return cmd_rateplan(config, args)
        return cmd_sweep(config, args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except RatePlanError as e:
        if e.min_achievable_bpp is not None:
            logger.error(f"Rate target infeasible: {e}")
            return EXIT_INFEASIBLE
        logger.error(f"Rate planning failed: {e}", exc_info=e)
        return EXIT_FAILURE
    except (AcppError, OSError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
