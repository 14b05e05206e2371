import asyncio
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from acpp.codecs import BuiltinDctCodec
from acpp.data import ImageBuffer, ImagePair, PairPool, build_pairs
from acpp.engine import Tensor
from acpp.errors import ContractError, DatasetError, NonFiniteError
from acpp.metrics import PSNR_INFINITY, psnr
from acpp.models import EvalVariant, ModelConfig, OptimizerConfig, Phase, TrainConfig
from acpp.network import init_model, load_checkpoint, restore
from acpp.network.model import ModelParameters
from acpp.training import (
    AdamState,
    adam_step,
    crop_size_sweep,
    evaluate,
    format_metrics_csv,
    train,
    validation_metrics,
)
from acpp.training.evaluation import CSV_HEADER
from acpp.training.trainer import HISTORY_HEADER

TINY = ModelConfig(num_blocks=2, feature_channels=8, ca_reduction=4, sa_kernel=3)


def single_parameter(value: float) -> ModelParameters:
    tensor = Tensor(np.array([value], dtype=np.float64), requires_grad=True, name="w")
    return ModelParameters(config=TINY, seed=0, tensors={"w": tensor})


def gt_patch(size, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (np.round(rng.uniform(0.2, 0.8, size=(size, size, 3)) * 255) / 255).astype(np.float32)


def offset_pool(sizes=(16,), count=4, offset=0.08, seed=0) -> PairPool:
    pairs = {}
    for size in sizes:
        pairs[size] = []
        for index in range(count):
            gt = gt_patch(size, seed=100 * size + index)
            pairs[size].append(((gt - offset).astype(np.float32), gt))
    return PairPool(pairs, seed=seed)


def validation_pairs(size=16, offset=0.08, count=2):
    pairs = []
    for index in range(count):
        gt = gt_patch(size, seed=900 + index)
        degraded = np.round((gt - offset) * 255) / 255
        pairs.append(ImagePair(f"val{index}", ImageBuffer.from_array(degraded), ImageBuffer.from_array(gt)))
    return pairs


def quick_config(**overrides) -> TrainConfig:
    values = dict(
        total_iterations=6,
        phase_switch_iteration=3,
        batch_size=1,
        validation_interval=2,
        patch_sizes=[16],
    )
    values.update(overrides)
    return TrainConfig(**values)


class AdamTests(unittest.TestCase):
    def test_first_step(self):
        params = single_parameter(0.5)
        state = adam_step(params, {"w": np.array([1.0])}, AdamState.create(params, OptimizerConfig()))
        self.assertEqual(state.t, 1)
        self.assertAlmostEqual(float(params["w"].data[0]), 0.5 - 1e-4 / (1.0 + 1e-8), delta=1e-15)

    def test_zero_gradient_leaves_parameter(self):
        params = single_parameter(0.5)
        state = AdamState.create(params, OptimizerConfig())
        adam_step(params, {"w": np.zeros(1)}, state)
        self.assertEqual(float(params["w"].data[0]), 0.5)
        self.assertEqual(state.t, 1)

    def test_first_moment_is_raw_gradient(self):
        params = single_parameter(0.0)
        state = AdamState.create(params, OptimizerConfig())
        for grad in (0.3, -0.7, 0.05):
            adam_step(params, {"w": np.array([grad])}, state)
            self.assertEqual(float(state.m["w"][0]), grad)

    def test_rejects_bad_gradients(self):
        params = single_parameter(0.5)
        state = AdamState.create(params, OptimizerConfig())
        with self.assertRaises(ContractError):
            adam_step(params, {}, state)
        with self.assertRaises(ContractError):
            adam_step(params, {"w": np.zeros(2)}, state)
        with self.assertRaises(NonFiniteError) as caught:
            adam_step(params, {"w": np.array([np.nan])}, state)
        self.assertEqual(caught.exception.parameter, "w")
        self.assertEqual(float(params["w"].data[0]), 0.5)
        self.assertEqual(state.t, 0)


class ScheduleTests(unittest.TestCase):
    def test_phase_switch(self):
        config = TrainConfig()
        self.assertIs(config.phase_at(0), Phase.MAE_ONLY)
        self.assertIs(config.phase_at(9999), Phase.MAE_ONLY)
        self.assertIs(config.phase_at(10000), Phase.COMBINED)
        self.assertIs(config.phase_at(19999), Phase.COMBINED)

    def test_invalid_schedules(self):
        cases = {
            "switch after end": dict(total_iterations=10, phase_switch_iteration=11),
            "empty sizes": dict(patch_sizes=[]),
            "zero batch": dict(batch_size=0),
        }
        for label, values in cases.items():
            with self.subTest(case=label):
                with self.assertRaises(ValueError):
                    TrainConfig(**values)


class TrainLoopTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.out = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_history_checkpoints_and_phases(self):
        params = init_model(TINY, seed=1)
        result = train(quick_config(), params, offset_pool(), validation_pairs(), output_dir=self.out, prefetch_depth=2)

        self.assertEqual([entry.iteration for entry in result.history], list(range(6)))
        self.assertEqual([entry.phase for entry in result.history], [Phase.MAE_ONLY] * 3 + [Phase.COMBINED] * 3)
        for entry in result.history:
            with self.subTest(iteration=entry.iteration):
                self.assertEqual(entry.ms_ssim is None, entry.phase is Phase.MAE_ONLY)
                validated = entry.iteration in (1, 3, 5)
                self.assertEqual(entry.val_psnr is not None, validated)
                if entry.phase is Phase.COMBINED:
                    expected = entry.mae + 0.05 * (1.0 - entry.ms_ssim)
                    self.assertAlmostEqual(entry.loss, expected, delta=1e-5)

        self.assertEqual(
            [Path(path).name for path in result.checkpoints],
            ["iter_000002.ckpt", "iter_000004.ckpt", "final.ckpt"],
        )
        loaded, config = load_checkpoint(self.out / "final.ckpt")
        self.assertEqual(config, TINY)
        self.assertTrue(np.array_equal(loaded["tail.weight"].data, result.params["tail.weight"].data))

        history = (self.out / "history.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(history[0], HISTORY_HEADER)
        self.assertEqual(len(history), 7)
        self.assertTrue(history[4].startswith("3,combined,"))

    def test_same_seed_same_run(self):
        first = train(quick_config(), init_model(TINY, seed=2), offset_pool(seed=5))
        second = train(quick_config(), init_model(TINY, seed=2), offset_pool(seed=5))
        self.assertEqual([e.loss for e in first.history], [e.loss for e in second.history])

    def test_learns_constant_offset(self):
        config = quick_config(
            total_iterations=80,
            phase_switch_iteration=80,
            validation_interval=80,
            optimizer=OptimizerConfig(lr=5e-4),
        )
        params = init_model(TINY.model_copy(update={"identity_init": True}), seed=3)
        result = train(config, params, offset_pool())
        losses = [entry.loss for entry in result.history]
        self.assertAlmostEqual(losses[0], 0.08, delta=1e-5)
        self.assertLess(float(np.mean(losses[-10:])), 0.75 * losses[0])

    def test_non_finite_loss_writes_diagnostic(self):
        class PoisonedPool:
            def batch(self, iteration, batch_size):
                data = np.full((batch_size, 3, 8, 8), np.nan, dtype=np.float32)
                return Tensor(data), Tensor(np.zeros_like(data))

        with self.assertRaises(NonFiniteError):
            train(quick_config(), init_model(TINY, seed=1), PoisonedPool(), output_dir=self.out)
        self.assertTrue((self.out / "diagnostic.ckpt").exists())

    def test_history_on_disk_survives_failure(self):
        clean = offset_pool()

        class FailingPool:
            def __init__(self, poison):
                self.poison = poison

            def batch(self, iteration, batch_size):
                degraded, gt = clean.batch(iteration, batch_size)
                if iteration < 3:
                    return degraded, gt
                if self.poison:
                    return Tensor(np.full(degraded.shape, np.nan, dtype=np.float32)), gt
                return degraded, Tensor(np.zeros((batch_size, 3, 16, 17), dtype=np.float32))

        cases = {
            "non-finite loss": (True, NonFiniteError, ["0", "1", "2"]),
            "bad batch": (False, DatasetError, ["0", "1"]),
        }
        for label, (poison, error, iterations) in cases.items():
            with self.subTest(case=label):
                out = self.out / label.replace(" ", "_")
                with self.assertRaises(error):
                    train(quick_config(phase_switch_iteration=6), init_model(TINY, seed=1), FailingPool(poison), output_dir=out)
                history = (out / "history.csv").read_text(encoding="utf-8").splitlines()
                self.assertEqual(history[0], HISTORY_HEADER)
                self.assertEqual([line.split(",")[0] for line in history[1:]], iterations)

    def test_mismatched_batch(self):
        class MismatchedPool:
            def batch(self, iteration, batch_size):
                return Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((1, 3, 8, 9)))

        with self.assertRaises(DatasetError):
            train(quick_config(), init_model(TINY, seed=1), MismatchedPool())


class CropSweepTests(unittest.TestCase):
    def test_one_run_per_size(self):
        config = quick_config(total_iterations=2, phase_switch_iteration=2, validation_interval=1, patch_sizes=[16, 24])
        initial = init_model(TINY, seed=4)
        before = initial.arrays()
        with tempfile.TemporaryDirectory() as tmp:
            result = crop_size_sweep(config, initial, offset_pool(sizes=(16, 24)), validation_pairs(), output_dir=tmp)
            self.assertTrue((Path(tmp) / "size_24" / "final.ckpt").exists())

        self.assertEqual([row.patch_size for row in result.rows], [16, 24])
        best = max(result.rows, key=lambda row: (row.val_psnr, row.val_msssim))
        self.assertEqual(result.best_size, best.patch_size)
        for name, array in before.items():
            self.assertTrue(np.array_equal(initial[name].data, array), name)

    def test_needs_validation(self):
        with self.assertRaises(DatasetError):
            crop_size_sweep(quick_config(), init_model(TINY, seed=4), offset_pool(), [])


class EvaluationTests(unittest.TestCase):
    def test_identity_model_on_clean_pairs(self):
        params = init_model(TINY.model_copy(update={"identity_init": True}), seed=1)
        pairs = []
        for index in range(2):
            gt = ImageBuffer.from_array(gt_patch(16, index))
            pairs.append(ImagePair(f"img{index}", gt, gt, bits=256))

        table = evaluate(params, pairs, ensemble=True)
        self.assertEqual(len(table.rows), 6)
        self.assertEqual(
            [row.variant for row in table.rows[:3]],
            [EvalVariant.BASELINE, EvalVariant.POST, EvalVariant.POST_ROTATION],
        )
        for row in table.rows + table.means:
            with self.subTest(image=row.image, variant=row.variant.value):
                self.assertEqual(row.psnr, PSNR_INFINITY)
                self.assertAlmostEqual(row.ms_ssim, 1.0, delta=1e-9)
                self.assertEqual(row.bpp, 1.0)

    def test_means_and_ordering(self):
        pairs = []
        for name, step in (("b", 1), ("a", 2)):
            gt = np.full((16, 16, 3), 51 / 255)
            degraded = np.full((16, 16, 3), (51 + step) / 255)
            pairs.append(ImagePair(name, ImageBuffer.from_array(degraded), ImageBuffer.from_array(gt)))

        table = evaluate(None, pairs)
        self.assertEqual([row.image for row in table.rows], ["a", "b"])
        self.assertEqual([row.variant for row in table.rows], [EvalVariant.BASELINE] * 2)
        expected = (psnr(pairs[0].degraded, pairs[0].gt) + psnr(pairs[1].degraded, pairs[1].gt)) / 2
        mean = table.mean_of(EvalVariant.BASELINE)
        self.assertAlmostEqual(mean.psnr, expected, delta=1e-9)
        self.assertIsNone(mean.bpp)
        self.assertIsNone(table.mean_of(EvalVariant.POST))

        lines = format_metrics_csv(table).splitlines()
        self.assertEqual(lines[0], CSV_HEADER)
        self.assertTrue(lines[-1].startswith("mean,baseline,"))

    def test_validation_metrics_use_post_rows(self):
        params = init_model(TINY, seed=2)
        pairs = validation_pairs()
        table = evaluate(params, pairs)
        self.assertEqual(
            validation_metrics(params, pairs, TrainConfig().loss),
            (table.mean_of(EvalVariant.POST).psnr, table.mean_of(EvalVariant.POST).ms_ssim),
        )

    def test_empty_set(self):
        with self.assertRaises(DatasetError):
            evaluate(None, [])


def textured_image(size, seed) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size] / size
    pixels = np.zeros((size, size, 3))
    for channel in range(3):
        plane = rng.uniform(0.3, 0.7)
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 6.0, size=2)
            plane = plane + rng.uniform(0.03, 0.1) * np.sin(2 * np.pi * (fy * rows + fx * cols) + rng.uniform(0, 6.3))
        pixels[:, :, channel] = plane
    return ImageBuffer.from_array(np.clip(pixels, 0.0, 1.0)).quantized()


class ShortTrainingTests(unittest.TestCase):
    """Codec output with a brightness drift: a short run must beat the decoded images."""

    def test_short_run_reduces_error(self):
        codec = BuiltinDctCodec()
        offset = 0.08

        def drifted(images):
            pairs = asyncio.run(build_pairs(images, codec, 2))
            return [
                ImagePair(pair.name, ImageBuffer.from_array(np.clip(pair.degraded.pixels - offset, 0.0, 1.0)), pair.gt)
                for pair in pairs
            ]

        train_pairs = drifted({f"train{i}": textured_image(24, seed=i) for i in range(4)})
        validation = drifted({f"val{i}": textured_image(24, seed=500 + i) for i in range(2)})
        pool = PairPool({24: [(pair.degraded.pixels, pair.gt.pixels) for pair in train_pairs]}, seed=0)

        config = TrainConfig(
            total_iterations=200,
            phase_switch_iteration=200,
            batch_size=2,
            patch_sizes=[24],
            validation_interval=200,
            optimizer=OptimizerConfig(lr=5e-4),
        )
        params = init_model(TINY.model_copy(update={"identity_init": True}), seed=3)
        train(config, params, pool)

        baseline = np.mean([np.abs(pair.degraded.pixels - pair.gt.pixels).mean() for pair in validation])
        post = np.mean([np.abs(restore(params, pair.degraded).pixels - pair.gt.pixels).mean() for pair in validation])
        self.assertGreater(baseline, 0.05)
        self.assertLess(post, 0.75 * baseline)


@unittest.skipUnless(os.environ.get("ACPP_RUN_SLOW"), "set ACPP_RUN_SLOW=1 to run the desk-scale training check")
class DeskScaleTrainingTests(unittest.TestCase):
    def test_post_processing_beats_codec_output(self):
        codec = BuiltinDctCodec()
        train_images = {f"train{i:02d}": textured_image(96, seed=i) for i in range(20)}
        val_images = {f"val{i}": textured_image(64, seed=1000 + i) for i in range(4)}
        pool = asyncio.run(PairPool.build(train_images, codec, 6, [64], 4, seed=1))
        validation = asyncio.run(build_pairs(val_images, codec, 6))

        config = TrainConfig(
            total_iterations=1000,
            phase_switch_iteration=500,
            batch_size=4,
            patch_sizes=[64],
            validation_interval=1000,
        )
        model = ModelConfig(num_blocks=4, feature_channels=16, ca_reduction=4, identity_init=True)
        result = train(config, init_model(model, seed=1), pool)

        table = evaluate(result.params, validation, config.loss)
        baseline = table.mean_of(EvalVariant.BASELINE)
        post = table.mean_of(EvalVariant.POST)
        self.assertGreaterEqual(post.psnr - baseline.psnr, 0.2)
        self.assertGreaterEqual(post.ms_ssim, baseline.ms_ssim)


if __name__ == "__main__":
    unittest.main()
