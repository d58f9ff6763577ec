import json
import os
import tempfile
import unittest

import numpy as np

from dataset.rng import RngStream
from dataset.samples import Batch, one_hot_matrix

from .image_ops import FILL_VALUE, cutout, hflip, pad_crop
from .pipeline import (
    AugPipeline,
    CutMix,
    ManifoldMixup,
    Mixup,
    Moderate,
    PolicyAug,
    weaken_intensity,
)
from .policy import (
    OP_KINDS,
    MAGNITUDE_TABLE_PATH,
    MAGNITUDES,
    Policy,
    PolicyConfigError,
    PolicyOp,
    apply_op,
    apply_policy,
    load_magnitude_table,
    load_policy,
)


def _image(c=3, h=32, w=32, seed=0):
    return RngStream(seed).generator().random((c, h, w)).astype(np.float32)


class TestModerateOps(unittest.TestCase):
    def test_hflip_involution(self):
        img = _image()
        twice = hflip(hflip(img, 1.0, RngStream(1)), 1.0, RngStream(2))
        np.testing.assert_array_equal(twice, img)

    def test_hflip_never(self):
        img = _image()
        np.testing.assert_array_equal(hflip(img, 0.0, RngStream(1)), img)

    def test_pad_crop_zero_is_identity(self):
        img = _image()
        np.testing.assert_array_equal(pad_crop(img, 0, RngStream(0)), img)

    def test_pad_crop_windows(self):
        img = _image(c=1, h=6, w=6, seed=4)
        padded = np.pad(img, ((0, 0), (2, 2), (2, 2)), mode="reflect")
        windows = {
            padded[:, t:t + 6, l:l + 6].tobytes() for t in range(5) for l in range(5)
        }
        for i in range(50):
            with self.subTest(draw=i):
                out = pad_crop(img, 2, RngStream(3).child(i))
                self.assertEqual(out.shape, img.shape)
                self.assertIn(out.tobytes(), windows)

    def test_cutout_zero_is_identity(self):
        img = _image()
        np.testing.assert_array_equal(cutout(img, 0, RngStream(0)), img)

    def test_cutout_full_coverage(self):
        img = _image(h=10, w=12)
        for i in range(10):
            out = cutout(img, 24, RngStream(i))
            self.assertTrue(np.all(out == FILL_VALUE))

    def test_cutout_interior_count(self):
        img = _image()
        interior = 0
        for i in range(40):
            trace = []
            out = cutout(img, 4, RngStream(100).child(i), trace)
            box = trace[0]
            if box["y1"] - box["y0"] == 4 and box["x1"] - box["x0"] == 4:
                interior += 1
                changed = (out != img).sum(axis=(1, 2))
                np.testing.assert_array_equal(changed, [16, 16, 16])
        self.assertGreater(interior, 0)

    def test_negative_sizes(self):
        with self.assertRaises(ValueError):
            cutout(_image(), -1, RngStream(0))
        with self.assertRaises(ValueError):
            pad_crop(_image(), -1, RngStream(0))


class TestPolicyOps(unittest.TestCase):
    def test_invert_twice(self):
        img = _image()
        out = apply_op(apply_op(img, "Invert", 0, RngStream(1)), "Invert", 0, RngStream(2))
        self.assertLessEqual(np.abs(out - img).max(), 1.0 / 255)

    def test_rotate_zero(self):
        img = _image()
        out = apply_op(img, "Rotate", 0, RngStream(3))
        self.assertLessEqual(np.abs(out - img).max(), 1.0 / 255)

    def test_posterize_full_depth(self):
        self.assertEqual(MAGNITUDES["Posterize"].physical(0), 8.0)
        img = _image()
        out = apply_op(img, "Posterize", 0, RngStream(4))
        self.assertLessEqual(np.abs(out - img).max(), 1.0 / 255)

    def test_every_op_preserves_range_and_shape(self):
        for channels in (1, 3):
            img = _image(c=channels, h=16, w=16)
            for kind in OP_KINDS:
                for magnitude in (0, 5, 9):
                    with self.subTest(kind=kind, magnitude=magnitude, channels=channels):
                        out = apply_op(img, kind, magnitude, RngStream(5))
                        self.assertEqual(out.shape, img.shape)
                        self.assertGreaterEqual(out.min(), 0.0)
                        self.assertLessEqual(out.max(), 1.0)

    def test_magnitude_mapping_monotone(self):
        for kind in OP_KINDS:
            with self.subTest(kind=kind):
                values = [MAGNITUDES[kind].physical(m) for m in range(10)]
                diffs = np.diff(values)
                self.assertTrue(np.all(diffs >= 0) or np.all(diffs <= 0))

    def test_magnitude_table_file(self):
        with open(MAGNITUDE_TABLE_PATH, encoding="utf-8") as f:
            raw = json.load(f)
        self.assertEqual(load_magnitude_table(), MAGNITUDES)
        self.assertEqual(MAGNITUDES["Posterize"].physical(0), 8.0)
        self.assertEqual(MAGNITUDES["Posterize"].physical(9), 4.0)
        self.assertAlmostEqual(MAGNITUDES["Rotate"].physical(3), 10.0)

        bad_tables = {
            "levels": dict(raw, levels=11),
            "format": dict(raw, format="magnitudes/2"),
            "missing op": dict(raw, ops={k: v for k, v in raw["ops"].items() if k != "Rotate"}),
            "unknown op": dict(raw, ops=dict(raw["ops"], Blur={"min": 0, "max": 1})),
        }
        with tempfile.TemporaryDirectory() as tmp:
            for name, table in bad_tables.items():
                with self.subTest(case=name):
                    path = os.path.join(tmp, "magnitudes.json")
                    with open(path, "w", encoding="utf-8") as f:
                        json.dump(table, f)
                    with self.assertRaises(PolicyConfigError):
                        load_magnitude_table(path)

    def test_unknown_kind(self):
        with self.assertRaises(PolicyConfigError):
            PolicyOp("Blur", 0.5, 3)
        with self.assertRaises(PolicyConfigError):
            apply_op(_image(), "Blur", 3, RngStream(0))

    def test_bad_probability_and_magnitude(self):
        with self.assertRaises(PolicyConfigError):
            PolicyOp("Invert", 1.5, 3)
        with self.assertRaises(PolicyConfigError):
            PolicyOp("Invert", 0.5, 10)

    def test_default_policy_covers_every_kind(self):
        policy = load_policy()
        kinds = {op.kind for sub in policy.sub_policies for op in sub}
        self.assertEqual(kinds, set(OP_KINDS))

    def test_apply_policy_deterministic(self):
        policy = load_policy()
        img = _image()
        a = apply_policy(img, policy, 16, RngStream(7).child(1))
        b = apply_policy(img, policy, 16, RngStream(7).child(1))
        np.testing.assert_array_equal(a, b)

    def test_probability_zero_policy_only_cutout(self):
        policy = Policy.from_lists([[["Invert", 0.0, 3], ["Rotate", 0.0, 9]]])
        img = _image()
        np.testing.assert_array_equal(apply_policy(img, policy, 0, RngStream(1)), img)


def _batch(n=8, k=4, seed=0, h=8, w=8):
    gen = RngStream(seed).generator()
    return Batch(gen.random((n, 3, h, w)).astype(np.float32), one_hot_matrix(gen.integers(0, k, n), k))


class TestPipeline(unittest.TestCase):
    def test_moderate_keeps_hard_labels(self):
        batch = _batch()
        out = AugPipeline(Moderate(0.5, 2)).apply(batch, range(8), RngStream(0))
        np.testing.assert_array_equal(out.batch.labels, batch.labels)
        self.assertIsNone(out.hook)

    def test_labels_stay_distributions(self):
        policy = load_policy()
        pipelines = [
            AugPipeline(Moderate(), Mixup(1.0)),
            AugPipeline(Moderate(), CutMix(1.0)),
            AugPipeline(Moderate(), ManifoldMixup(1.0, (0, 1))),
            AugPipeline(Moderate(), PolicyAug(policy, 4)),
        ]
        batch = _batch()
        for pipeline in pipelines:
            with self.subTest(method=pipeline.method):
                out = pipeline.apply(batch, range(8), RngStream(3))
                labels = out.batch.labels
                self.assertTrue(np.all(labels >= 0))
                np.testing.assert_allclose(labels.sum(axis=1), 1.0, atol=1e-6)
                self.assertGreaterEqual(out.batch.images.min(), 0.0)
                self.assertLessEqual(out.batch.images.max(), 1.0)

    def test_per_sample_paths_follow_dataset_index(self):
        batch = _batch()
        pipeline = AugPipeline(Moderate(0.5, 2))
        full = pipeline.apply(batch, range(8), RngStream(1)).batch.images
        # Same sample indices in a different batch order give the same images.
        order = [3, 1, 7, 0, 2, 6, 5, 4]
        shuffled = Batch(batch.images[order], batch.labels[order])
        again = pipeline.apply(shuffled, order, RngStream(1)).batch.images
        np.testing.assert_array_equal(again, full[order])

    def test_manifold_hook(self):
        out = AugPipeline(Moderate(0.0, 0), ManifoldMixup(1.0, (1,))).apply(_batch(), range(8), RngStream(2))
        self.assertEqual(out.hook.layer, 1)
        self.assertEqual(sorted(out.hook.perm.tolist()), list(range(8)))

    def test_trace_log(self):
        out = AugPipeline(Moderate(), CutMix(1.0)).apply(_batch(), range(8), RngStream(2), trace=True)
        self.assertEqual(len(out.log["samples"]), 8)
        self.assertEqual(out.log["batch"]["op"], "cutmix")


class TestWeakenIntensity(unittest.TestCase):
    def test_scale_one_unchanged(self):
        p = AugPipeline(Moderate(), Mixup(1.0))
        self.assertEqual(weaken_intensity(p, 1.0), p)

    def test_scale_zero_is_moderate_only(self):
        for op in (Mixup(1.0), CutMix(0.5), ManifoldMixup(2.0), PolicyAug(load_policy(), 16)):
            with self.subTest(op=type(op).__name__):
                p = AugPipeline(Moderate(0.5, 4), op)
                self.assertEqual(weaken_intensity(p, 0.0), AugPipeline(Moderate(0.5, 4)))

    def test_half_cutmix(self):
        p = weaken_intensity(AugPipeline(Moderate(), CutMix(0.5)), 0.5)
        self.assertEqual(p.intensive, CutMix(0.25))
        self.assertEqual(p.intensity_scale, 0.5)

    def test_mixup_gamma_scaled(self):
        p = weaken_intensity(AugPipeline(Moderate(), Mixup(1.0)), 0.25)
        self.assertEqual(p.intensive.gamma, 0.25)
        self.assertEqual(p.moderate, Moderate())

    def test_bad_scale(self):
        with self.assertRaises(ValueError):
            weaken_intensity(AugPipeline(), 1.5)


if __name__ == "__main__":
    unittest.main()
