import math
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

from acpp.data import ImageBuffer, load_image, rotate90, save_image
from acpp.main import EXIT_FAILURE, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, build_parser, load_run_config, main
from acpp.models import ModelConfig
from acpp.network import init_model, load_checkpoint, save_checkpoint

PROJECT_ROOT = Path(__file__).resolve().parents[2]

TINY = ModelConfig(num_blocks=1, feature_channels=4, ca_reduction=2, sa_kernel=3)

TRAIN_CONFIG = """\
[run]
manifest = {manifest}
codec = builtin
split_ratio = 0.5
output_dir = {out}

[model]
num_blocks = 1
feature_channels = 4
ca_reduction = 2
sa_kernel = 3

[train]
total_iterations = 2
phase_switch_iteration = 1
batch_size = 1
patch_sizes = 8
pairs_per_image = 1
validation_interval = 1
qp = 5

[loss]
window_size = 3
num_scales = 1
scale_weights = 1.0
"""


def smooth_image(height, width, seed=0) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.2, 0.8, size=(1, 1, 3))
    ramp = np.linspace(0.0, 0.2, width)[None, :, None]
    return ImageBuffer.from_array(np.broadcast_to(base + ramp, (height, width, 3))).quantized()


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.out = self.root / "out"

    def tearDown(self):
        self._tmp.cleanup()

    def write_images(self, count=4, size=12) -> Path:
        names = []
        for index in range(count):
            name = f"img{index}.png"
            save_image(smooth_image(size, size, seed=index), self.root / name)
            names.append(name)
        manifest = self.root / "images.txt"
        manifest.write_text("\n".join(names) + "\n", encoding="utf-8")
        return manifest


class FreshInterpreterTests(unittest.TestCase):
    """Each subpackage must import on its own, without another one loaded first."""

    def run_python(self, *args):
        return subprocess.run(
            [sys.executable, *args], cwd=PROJECT_ROOT, capture_output=True, text=True, timeout=120
        )

    def test_subpackages_import_alone(self):
        for module in ("acpp.codecs", "acpp.data", "acpp.metrics", "acpp.network", "acpp.training", "acpp.main"):
            with self.subTest(module=module):
                result = self.run_python("-c", f"import {module}")
                self.assertEqual(result.returncode, 0, result.stderr)

    def test_module_help(self):
        result = self.run_python("-m", "acpp", "--help")
        self.assertEqual(result.returncode, 0, result.stderr)
        self.assertIn("rateplan", result.stdout)


class ParserTests(CliTestCase):
    def test_overrides(self):
        args = build_parser().parse_args(["rateplan", "--seed", "5", "--out", "elsewhere", "--ensemble"])
        config = load_run_config(args)
        self.assertEqual((config.seed, config.train.seed), (5, 5))
        self.assertEqual(config.output_dir, "elsewhere")
        self.assertTrue(config.ensemble)

    def test_flag_absent_keeps_config(self):
        args = build_parser().parse_args(["train"])
        self.assertIsNone(args.ensemble)
        self.assertFalse(load_run_config(args).ensemble)


class RatePlanCommandTests(CliTestCase):
    def test_writes_plan(self):
        manifest = self.write_images()
        code = main(["rateplan", "--manifest", str(manifest), "--target-bpp", "1000", "--out", str(self.out)])
        self.assertEqual(code, EXIT_OK)
        lines = (self.out / "rate_plan.txt").read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "path,qp,bits,bpp")
        self.assertEqual(len(lines), 6)
        self.assertIn("qps=0", lines[-1])

    def test_infeasible_target(self):
        manifest = self.write_images()
        code = main(["rateplan", "--manifest", str(manifest), "--target-bpp", "0.0001", "--out", str(self.out)])
        self.assertEqual(code, EXIT_INFEASIBLE)
        self.assertFalse((self.out / "rate_plan.txt").exists())

    def test_usage_errors(self):
        manifest = self.write_images()
        cases = {
            "no manifest": ["rateplan", "--out", str(self.out)],
            "window outside codec": ["rateplan", "--manifest", str(manifest), "--qp-window", "0,20"],
            "wide mix without flag": ["rateplan", "--manifest", str(manifest), "--mix-span", "3"],
        }
        for label, argv in cases.items():
            with self.subTest(case=label):
                self.assertEqual(main(argv), EXIT_USAGE)

    def test_missing_manifest_file(self):
        code = main(["rateplan", "--manifest", str(self.root / "absent.txt"), "--out", str(self.out)])
        self.assertEqual(code, EXIT_FAILURE)

    def test_missing_config_file(self):
        self.assertEqual(main(["rateplan", "--config", str(self.root / "absent.ini")]), EXIT_USAGE)


class ModelCommandTests(CliTestCase):
    def save_identity_checkpoint(self) -> Path:
        path = self.root / "identity.ckpt"
        save_checkpoint(init_model(TINY.model_copy(update={"identity_init": True}), seed=1), path)
        return path

    def test_infer_writes_restored_images(self):
        checkpoint = self.save_identity_checkpoint()
        source = self.root / "decoded.png"
        image = smooth_image(10, 14)
        save_image(image, source)

        code = main(["infer", "--checkpoint", str(checkpoint), "--out", str(self.out), str(source)])
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(np.array_equal(load_image(self.out / "decoded.png").pixels, image.pixels))

    def test_eval_from_pairs_manifest(self):
        checkpoint = self.save_identity_checkpoint()
        for index in range(2):
            image = smooth_image(12, 12, seed=index)
            save_image(image, self.root / f"gt{index}.png")
            save_image(image, self.root / f"dec{index}.png")
        pairs = self.root / "pairs.txt"
        pairs.write_text("dec0.png,gt0.png,144\ndec1.png,gt1.png,288\n", encoding="utf-8")

        code = main(["eval", "--checkpoint", str(checkpoint), "--pairs", str(pairs), "--out", str(self.out), "--ensemble"])
        self.assertEqual(code, EXIT_OK)
        rows = (self.out / "metrics.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(rows[0], "image,variant,psnr,ms_ssim,bpp")
        self.assertEqual(len(rows), 1 + 6 + 3)
        self.assertTrue(rows[-1].startswith("mean,post+rotation,inf,"))
        self.assertTrue(rows[-1].endswith(",1.500000"))
        report = (self.out / "report.html").read_text(encoding="utf-8")
        self.assertIn("Codec + Post + Rotation", report)

    def test_checkpoint_must_match_config(self):
        checkpoint = self.save_identity_checkpoint()
        config = self.root / "other.ini"
        config.write_text("[model]\nnum_blocks = 2\nfeature_channels = 4\nca_reduction = 2\nsa_kernel = 3\n")
        source = self.root / "decoded.png"
        save_image(smooth_image(8, 8), source)
        code = main(["infer", "--config", str(config), "--checkpoint", str(checkpoint), "--out", str(self.out), str(source)])
        self.assertEqual(code, EXIT_FAILURE)

    def test_train_end_to_end(self):
        manifest = self.write_images(count=4, size=12)
        config = self.root / "experiment.ini"
        config.write_text(TRAIN_CONFIG.format(manifest=manifest, out=self.out), encoding="utf-8")

        self.assertEqual(main(["train", "--config", str(config)]), EXIT_OK)
        for name in ("final.ckpt", "history.csv", "metrics.csv"):
            self.assertTrue((self.out / name).exists(), name)
        _, model = load_checkpoint(self.out / "final.ckpt")
        self.assertEqual(model, TINY)
        history = (self.out / "history.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual([line.split(",")[1] for line in history[1:]], ["mae_only", "combined"])
        for line in history[1:]:
            with self.subTest(row=line):
                self.assertTrue(math.isfinite(float(line.split(",")[2])))

        metrics = [row.split(",") for row in (self.out / "metrics.csv").read_text(encoding="utf-8").splitlines()[1:]]
        per_image = [row for row in metrics if row[0] != "mean"]
        # four images split 0.5 leave two for validation, each scored as baseline and post
        self.assertEqual(len({row[0] for row in per_image}), 2)
        self.assertEqual(sorted(row[1] for row in per_image), ["baseline", "baseline", "post", "post"])
        self.assertEqual(sorted(row[1] for row in metrics if row[0] == "mean"), ["baseline", "post"])

    def test_eval_artifacts_are_reproducible(self):
        checkpoint = self.save_identity_checkpoint()
        manifest = self.write_images(count=2)
        runs = [self.root / "first", self.root / "second"]
        for run in runs:
            argv = ["eval", "--checkpoint", str(checkpoint), "--manifest", str(manifest), "--out", str(run)]
            self.assertEqual(main(argv), EXIT_OK)
        for name in ("metrics.csv", "report.html"):
            with self.subTest(artifact=name):
                self.assertEqual((runs[0] / name).read_bytes(), (runs[1] / name).read_bytes())
        self.assertIn("2 image(s)", (runs[0] / "report.html").read_text(encoding="utf-8"))

    def test_infer_ensemble_commutes_with_rotation(self):
        checkpoint = self.root / "random.ckpt"
        save_checkpoint(init_model(TINY, seed=7), checkpoint)
        image = smooth_image(8, 10, seed=3)
        save_image(image, self.root / "original.png")
        save_image(ImageBuffer(pixels=rotate90(image.pixels, 1)), self.root / "rotated.png")

        argv = ["infer", "--checkpoint", str(checkpoint), "--ensemble", "--out", str(self.out)]
        code = main(argv + [str(self.root / "original.png"), str(self.root / "rotated.png")])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(sorted(path.name for path in self.out.iterdir()), ["original.png", "rotated.png"])
        expected = rotate90(load_image(self.out / "original.png").pixels, 1)
        restored = load_image(self.out / "rotated.png").pixels
        self.assertLessEqual(float(np.abs(restored - expected).max()), 1.0 / 255 + 1e-6)

    def test_eval_lossless_codec(self):
        checkpoint = self.save_identity_checkpoint()
        manifest = self.write_images(count=2)
        argv = ["eval", "--checkpoint", str(checkpoint), "--manifest", str(manifest), "--codec", "lossless", "--qp", "0"]
        self.assertEqual(main(argv + ["--out", str(self.out)]), EXIT_OK)
        rows = (self.out / "metrics.csv").read_text(encoding="utf-8").splitlines()[1:]
        self.assertEqual(len(rows), 2 * 2 + 2)
        for row in rows:
            _, variant, value, similarity, _ = row.split(",")
            with self.subTest(row=row):
                self.assertIn(variant, ("baseline", "post"))
                self.assertEqual(value, "inf")
                self.assertEqual(similarity, "1.000000")

    def test_train_is_deterministic(self):
        manifest = self.write_images(count=4, size=12)
        config = self.root / "experiment.ini"
        config.write_text(TRAIN_CONFIG.format(manifest=manifest, out=self.out), encoding="utf-8")

        runs = [self.root / "first", self.root / "second"]
        for run in runs:
            self.assertEqual(main(["train", "--config", str(config), "--out", str(run)]), EXIT_OK)
        for name in ("final.ckpt", "metrics.csv", "history.csv"):
            with self.subTest(artifact=name):
                self.assertEqual((runs[0] / name).read_bytes(), (runs[1] / name).read_bytes())


if __name__ == "__main__":
    unittest.main()
