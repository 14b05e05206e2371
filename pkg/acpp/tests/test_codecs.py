import asyncio
import itertools
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from acpp.codecs import (
    BuiltinDctCodec,
    ExternalCodec,
    LosslessCodec,
    builtin_dct_degrader,
    compute_bpp,
    format_plan,
    get_codec,
    measure_size_table,
    plan_rates,
    rate_target_plan,
    run_codec,
)
from acpp.codecs.builtin import HEADER_BITS, quant_step
from acpp.codecs.external import build_command
from acpp.data.images import ImageBuffer, encode_image_bytes, save_image
from acpp.errors import CodecError, ConfigError, RatePlanError
from acpp.metrics import psnr
from acpp.models import CodecSpec, SizeTable


def random_image(height, width, seed=0) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    return ImageBuffer.from_array(rng.uniform(0.0, 1.0, size=(height, width, 3))).quantized()


def smooth_image(height, width) -> ImageBuffer:
    rows = np.linspace(0.2, 0.8, height)[:, None, None]
    cols = np.linspace(0.1, 0.6, width)[None, :, None]
    return ImageBuffer.from_array(np.broadcast_to(0.5 * rows + 0.5 * cols, (height, width, 3))).quantized()


def size_table(bits, pixels, psnrs=None) -> SizeTable:
    names = sorted(bits)
    return SizeTable(images=names, pixels=pixels, bits=bits, psnr=psnrs or {})


class BuiltinDegraderTests(unittest.TestCase):
    def test_bits_non_increasing_in_qp(self):
        codec = BuiltinDctCodec()
        for seed in range(10):
            image = random_image(24, 40, seed=seed)
            bits = [builtin_dct_degrader(image, qp)[1] for qp in codec.qps()]
            with self.subTest(seed=seed):
                self.assertEqual(bits, sorted(bits, reverse=True))
                self.assertGreater(bits[0], bits[-1])

    def test_finest_step_is_near_lossless(self):
        image = smooth_image(32, 32)
        decoded, _ = builtin_dct_degrader(image, 0)
        self.assertGreater(psnr(decoded, image), 50.0)

    def test_constant_image(self):
        image = ImageBuffer.from_array(np.full((16, 24, 3), 102 / 255))
        blocks = (16 // 8) * (24 // 8) * 3
        for qp in (0, 5, 9):
            with self.subTest(qp=qp):
                decoded, bits = builtin_dct_degrader(image, qp)
                error = np.abs(decoded.pixels.astype(np.float64) - image.pixels) * 255.0
                self.assertLessEqual(float(error.max()), quant_step(qp))
                # one DC pair per block at most: pair count, run and level codes
                self.assertLessEqual(bits, HEADER_BITS + blocks * (3 + 1 + 23))

    def test_odd_sizes_and_determinism(self):
        image = random_image(13, 21, seed=4)
        first = builtin_dct_degrader(image, 5)
        second = builtin_dct_degrader(image, 5)
        self.assertEqual(first[0].pixels.shape, (13, 21, 3))
        self.assertEqual(first[1], second[1])
        self.assertTrue(np.array_equal(first[0].pixels, second[0].pixels))

    def test_qp_outside_ladder(self):
        with self.assertRaises(CodecError):
            asyncio.run(BuiltinDctCodec().degrade(random_image(8, 8), 10))


class LosslessCodecTests(unittest.TestCase):
    def test_identity(self):
        image = random_image(9, 11)
        result = asyncio.run(LosslessCodec().degrade(image, 3))
        self.assertTrue(np.array_equal(result.decoded.pixels, image.pixels))
        self.assertEqual(result.bits, 8 * len(encode_image_bytes(image)))


@unittest.skipUnless(shutil.which("sh") and shutil.which("cp"), "needs sh and cp")
class ExternalCodecTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.workdir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def spec(self, encode, decode="cp {input} {output}") -> CodecSpec:
        return CodecSpec(name="copy", encode_template=encode, decode_template=decode, qp_range=(0, 3))

    def test_copy_codec_passes_through(self):
        codec = ExternalCodec(self.spec("sh -c 'cp \"$0\" \"$1\"' {input} {output} {qp}"))
        image = random_image(10, 12, seed=2)
        path = self.workdir / "source.png"
        save_image(image, path)

        decoded, bits = asyncio.run(run_codec(path, 2, codec, self.workdir))
        self.assertTrue(np.array_equal(decoded.pixels, image.pixels))
        self.assertEqual(bits, 8 * len(encode_image_bytes(image)))
        self.assertEqual(list(self.workdir.iterdir()), [path])

    def test_failing_command_carries_transcript(self):
        codec = ExternalCodec(self.spec("sh -c 'echo broken >&2; exit 3' {input} {output} {qp}"))
        with self.assertRaises(CodecError) as caught:
            asyncio.run(codec.degrade(random_image(8, 8), 1, self.workdir))
        self.assertIn("exit status: 3", caught.exception.transcript)
        self.assertIn("broken", caught.exception.transcript)

    def test_missing_output(self):
        codec = ExternalCodec(self.spec("sh -c 'true' {input} {output} {qp}"))
        with self.assertRaises(CodecError) as caught:
            asyncio.run(codec.degrade(random_image(8, 8), 1, self.workdir))
        self.assertIn("no bitstream", str(caught.exception))

    def test_missing_binary(self):
        codec = ExternalCodec(self.spec("no-such-encoder-binary {input} {output} {qp}"))
        with self.assertRaises(CodecError):
            asyncio.run(codec.degrade(random_image(8, 8), 1, self.workdir))

    def test_template_validation(self):
        cases = {
            "missing qp": ("enc {input} {output}", "dec {input} {output}"),
            "repeated input": ("enc {input} {input} {output} {qp}", "dec {input} {output}"),
            "decode without output": ("enc {input} {output} {qp}", "dec {input}"),
        }
        for label, (encode, decode) in cases.items():
            with self.subTest(case=label):
                with self.assertRaises(ValidationError):
                    CodecSpec(name="bad", encode_template=encode, decode_template=decode, qp_range=(0, 1))

    def test_paths_with_spaces_stay_single_arguments(self):
        argv = build_command("enc -q {qp} {input} -o {output}", {"qp": "3", "input": "/a b/in.png", "output": "/c/out"})
        self.assertEqual(argv, ["enc", "-q", "3", "/a b/in.png", "-o", "/c/out"])


class RegistryTests(unittest.TestCase):
    def test_lookup(self):
        self.assertIsInstance(get_codec("builtin"), BuiltinDctCodec)
        self.assertEqual(get_codec("lossless", qp_range=(2, 5)).qp_range, (2, 5))
        with self.assertRaises(ConfigError):
            get_codec("bpg")
        with self.assertRaises(ConfigError):
            get_codec("external")


class BppTests(unittest.TestCase):
    def test_single_image(self):
        per_image, dataset = compute_bpp({"a": 39322}, {"a": (512, 512)})
        self.assertAlmostEqual(per_image["a"], 0.15, places=5)
        self.assertEqual(dataset, per_image["a"])

    def test_dataset_is_bits_over_pixels(self):
        per_image, dataset = compute_bpp({"a": 1400, "b": 1600}, {"a": (100, 100), "b": (100, 100)})
        self.assertAlmostEqual(per_image["a"], 0.14)
        self.assertAlmostEqual(dataset, 0.15)
        _, weighted = compute_bpp({"a": 100, "b": 300}, {"a": (10, 10), "b": (10, 30)})
        self.assertAlmostEqual(weighted, 1.0)


class RatePlanTests(unittest.TestCase):
    def test_adjacent_mix_hits_target(self):
        table = size_table(
            {"a": {0: 1600, 1: 1400}, "b": {0: 1600, 1: 1400}},
            {"a": 10000, "b": 10000},
        )
        plan = plan_rates(table, 0.15)
        self.assertEqual(plan.assignments, {"a": 0, "b": 1})
        self.assertEqual(plan.achieved_bpp, 0.15)
        self.assertEqual(plan.base_qp, 1)

    def test_everything_fits_at_best_qp(self):
        table = size_table({"a": {0: 500, 1: 300}, "b": {0: 700, 1: 400}}, {"a": 10000, "b": 10000})
        plan = plan_rates(table, 0.15)
        self.assertEqual(set(plan.assignments.values()), {0})

    def test_upgrades_best_gain_per_bit_first(self):
        table = size_table(
            {"a": {0: 1300, 1: 1000}, "b": {0: 1300, 1: 1000}},
            {"a": 10000, "b": 10000},
            {"a": {0: 31.0, 1: 30.0}, "b": {0: 33.0, 1: 30.0}},
        )
        plan = plan_rates(table, 0.115)
        self.assertEqual(plan.assignments, {"a": 1, "b": 0})

    def test_unreachable_target(self):
        table = size_table({"a": {0: 1600, 1: 1400}}, {"a": 10000})
        with self.assertRaises(RatePlanError) as caught:
            plan_rates(table, 0.0001)
        self.assertAlmostEqual(caught.exception.min_achievable_bpp, 0.14)

    def test_non_monotone_sizes(self):
        table = size_table({"a": {0: 1600, 1: 1700}}, {"a": 10000})
        with self.assertRaises(RatePlanError) as caught:
            plan_rates(table, 0.5)
        self.assertEqual(caught.exception.violating_pair, ("a", 0, 1))
        self.assertIsNone(caught.exception.min_achievable_bpp)

    def test_wide_mix_needs_flag(self):
        table = size_table({"a": {0: 1600, 1: 1400}}, {"a": 10000})
        with self.assertRaises(ConfigError):
            plan_rates(table, 0.15, mix_span=3)

    def test_greedy_close_to_exhaustive_optimum(self):
        rng = np.random.default_rng(2024)
        qps = [0, 1, 2]
        for case in range(20):
            n = int(rng.integers(2, 9))
            names = [f"img{i:02d}" for i in range(n)]
            pixels = {name: int(rng.integers(5000, 20000)) for name in names}
            total = sum(pixels.values())
            bits, psnrs = {}, {}
            for name in names:
                coarse = int(pixels[name] * rng.uniform(0.10, 0.14))
                step1 = int(rng.uniform(0.0005, 0.005) * total)
                step0 = int(rng.uniform(0.0005, 0.005) * total)
                bits[name] = {2: coarse, 1: coarse + step1, 0: coarse + step1 + step0}
                base = rng.uniform(28.0, 34.0)
                psnrs[name] = {2: base, 1: base + rng.uniform(0.1, 1.0), 0: base + rng.uniform(1.1, 2.0)}
            table = size_table(bits, pixels, psnrs)
            low = table.dataset_bpp({name: 2 for name in names})
            high = table.dataset_bpp({name: 0 for name in names})
            target = float(rng.uniform(low, high))

            best = max(
                bpp
                for choice in itertools.product(qps, repeat=n)
                for bpp in [sum(bits[name][qp] for name, qp in zip(names, choice)) / total]
                if bpp <= target
            )
            plan = plan_rates(table, target)
            with self.subTest(case=case, images=n):
                self.assertLessEqual(plan.achieved_bpp, target)
                self.assertGreaterEqual(plan.achieved_bpp, best - 0.005)
                self.assertLessEqual(max(plan.assignments.values()) - min(plan.assignments.values()), 1)
                self.assertEqual(plan, plan_rates(table, target))

    def test_budgets_between_and_at_ladder_levels(self):
        rng = np.random.default_rng(77)
        for case in range(12):
            n = int(rng.integers(2, 8))
            names = [f"img{i:02d}" for i in range(n)]
            pixels = {name: int(rng.integers(5000, 20000)) for name in names}
            total = sum(pixels.values())
            bits, psnrs = {}, {}
            for name in names:
                coarse = int(pixels[name] * rng.uniform(0.10, 0.14))
                step1, step0 = (int(pixels[name] * rng.uniform(0.02, 0.08)) for _ in range(2))
                bits[name] = {2: coarse, 1: coarse + step1, 0: coarse + step1 + step0}
                base = rng.uniform(28.0, 34.0)
                psnrs[name] = {2: base, 1: base + rng.uniform(0.1, 1.0), 0: base + rng.uniform(1.1, 2.0)}
            table = size_table(bits, pixels, psnrs)
            coarsest, middle, finest = (table.dataset_bpp({name: qp for name in names}) for qp in (2, 1, 0))

            targets = {
                "between 2 and 1": coarsest + rng.uniform(0.3, 0.7) * (middle - coarsest),
                "between 1 and 0": middle + rng.uniform(0.3, 0.7) * (finest - middle),
                "at coarsest": coarsest,
                "just above coarsest": coarsest + 1e-4 * (middle - coarsest),
                "just below finest": finest - 1e-4 * (finest - middle),
                "at finest": finest,
            }
            for label, target in targets.items():
                with self.subTest(case=case, budget=label):
                    plan = plan_rates(table, target)
                    spent = sum(bits[name][qp] for name, qp in plan.assignments.items())
                    self.assertEqual(plan.achieved_bpp, spent / total)
                    self.assertLessEqual(plan.achieved_bpp, target)
                    self.assertLessEqual(set(plan.assignments.values()), {plan.base_qp, plan.base_qp - 1})

                    # No image left at the base qp can still be moved up within budget.
                    steps = {}
                    if plan.base_qp > 0:
                        steps = {name: bits[name][plan.base_qp - 1] - bits[name][plan.base_qp] for name in names}
                    for name, qp in plan.assignments.items():
                        if qp == plan.base_qp and steps:
                            self.assertGreater((spent + steps[name]) / total, target)

                    best = max(
                        bpp
                        for choice in itertools.product((0, 1, 2), repeat=n)
                        if max(choice) - min(choice) <= 1
                        for bpp in [sum(bits[name][qp] for name, qp in zip(names, choice)) / total]
                        if bpp <= target
                    )
                    self.assertGreaterEqual(plan.achieved_bpp, best - max(steps.values(), default=0) / total)

            self.assertEqual(set(plan_rates(table, finest).assignments.values()), {0})
            self.assertEqual(set(plan_rates(table, coarsest).assignments.values()), {2})
            with self.assertRaises(RatePlanError) as caught:
                plan_rates(table, coarsest * 0.99)
            self.assertEqual(caught.exception.min_achievable_bpp, coarsest)

    def test_builtin_plan_end_to_end(self):
        images = {f"img{i}": random_image(16, 24, seed=i) for i in range(4)}
        table = asyncio.run(measure_size_table(images, BuiltinDctCodec(), range(0, 10)))
        target = (table.dataset_bpp({n: 4 for n in images}) + table.dataset_bpp({n: 3 for n in images})) / 2
        plan = asyncio.run(rate_target_plan(images, BuiltinDctCodec(), target, (0, 9)))
        self.assertLessEqual(plan.achieved_bpp, target)
        self.assertEqual(set(plan.assignments.values()), {3, 4})

        text = format_plan(plan)
        lines = text.splitlines()
        self.assertEqual(lines[0], "path,qp,bits,bpp")
        self.assertEqual(len(lines), 6)
        self.assertTrue(lines[-1].startswith(f"# achieved_bpp={plan.achieved_bpp:.6f}"))

    def test_window_outside_codec_range(self):
        with self.assertRaises(RatePlanError):
            asyncio.run(rate_target_plan({"a": random_image(8, 8)}, BuiltinDctCodec(), 0.5, (0, 12)))


if __name__ == "__main__":
    unittest.main()
