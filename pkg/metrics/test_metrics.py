import os
import tempfile
import unittest

import numpy as np

from augment.pipeline import AugPipeline, CutMix, Mixup, Moderate
from dataset.rng import RngStream
from dataset.synthetic import SyntheticSpec, generate_synthetic
from network.model import ModelSpec, build_model

from .records import CSV_FIELDS, EpochRecord, curve_rows, export_records, read_records
from .report import ABSENT, RunSummary, format_cell, gap_report
from .risk import IDENTITY, empirical_risk, gap, risk_gap


def _record(epoch, stage, risk_aug=0.5, risk_clean=0.25, lr=0.1):
    return EpochRecord(epoch, stage, lr, risk_aug, risk_clean, 1.0, 0.5, 1.0 if stage != "refine" else 0.0)


def _records(n, m):
    out = [_record(0, "init", 2.0, 2.0, 0.0)]
    out += [_record(e, "augment", 1.0 + 0.1 * e, 0.5 + 0.01 * e) for e in range(1, n + 1)]
    out += [_record(e, "refine", 0.3 + 0.01 * e, 0.2 + 0.01 * e) for e in range(n + 1, n + m + 1)]
    return out


class TestGap(unittest.TestCase):
    def test_examples(self):
        self.assertAlmostEqual(risk_gap(1.356, 0.098), 1.258, places=12)
        self.assertEqual(risk_gap(0.4, 0.4), 0.0)
        self.assertAlmostEqual(gap(_record(1, "augment", 0.5, 0.25)), 0.25)

    def test_symmetric(self):
        for a, b in [(0.1, 2.3), (5.0, 0.0), (1e-3, 1e-4)]:
            with self.subTest(a=a, b=b):
                self.assertEqual(risk_gap(a, b), risk_gap(b, a))
                self.assertGreaterEqual(risk_gap(a, b), 0.0)


class TestRecords(unittest.TestCase):
    def test_invalid_record(self):
        with self.assertRaises(ValueError):
            _record(1, "warmup")
        with self.assertRaises(ValueError):
            _record(1, "augment", risk_aug=float("nan"))
        with self.assertRaises(ValueError):
            EpochRecord(1, "augment", 0.1, 0.5, 0.5, 1.0, 1.5, 1.0)

    def test_export_and_read(self):
        records = _records(3, 2)
        with tempfile.TemporaryDirectory() as tmp:
            for fmt in ("csv", "jsonl"):
                with self.subTest(fmt=fmt):
                    path = os.path.join(tmp, f"metrics.{fmt}")
                    export_records(records, path)
                    self.assertEqual(read_records(path), records)

            path = os.path.join(tmp, "metrics.csv")
            with open(path, encoding="utf-8") as f:
                lines = f.read().split("\n")
            self.assertEqual(lines[0], ",".join(CSV_FIELDS))
            self.assertEqual(len([line for line in lines if line]), len(records) + 1)

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            export_records(_records(1, 0), "metrics.parquet")
        with self.assertRaises(ValueError):
            export_records([], "metrics.csv")

    def test_curve_boundary(self):
        rows = curve_rows(_records(3, 2), boundary=3)
        self.assertEqual(len(rows), 6)
        self.assertEqual([r["boundary"] for r in rows], [0, 0, 0, 1, 0, 0])


class TestGapReport(unittest.TestCase):
    def test_single_run(self):
        records = _records(4, 2)
        report = gap_report([RunSummary("seed_0", "mixup", tuple(records))])
        self.assertEqual(len(report.rows), 1)
        cells = report.cells()[0]
        self.assertEqual(cells[:2], ["mixup", "seed_0"])
        self.assertEqual(cells[2:], [
            format_cell(records[4].risk_aug), format_cell(records[4].risk_clean),
            format_cell(records[6].risk_aug), format_cell(records[6].risk_clean),
        ])
        self.assertEqual(format_cell(1.258), "1258.000")

    def test_ordering(self):
        runs = [
            RunSummary("b", "mixup", tuple(_records(2, 1))),
            RunSummary("a", "mixup", tuple(_records(2, 1))),
            RunSummary("z", "cutmix", tuple(_records(2, 1))),
        ]
        report = gap_report(runs)
        self.assertEqual([(r.method, r.run) for r in report.rows], [("cutmix", "z"), ("mixup", "a"), ("mixup", "b")])
        self.assertEqual(len(report.to_text().splitlines()), 2 + 1 + 3)

    def test_no_refinement(self):
        report = gap_report([RunSummary("r", "mixup", tuple(_records(3, 0)))])
        self.assertEqual(report.cells()[0][4:], [ABSENT, ABSENT])

    def test_requires_augmentation(self):
        with self.assertRaises(ValueError):
            gap_report([RunSummary("r", "moderate", tuple(_records(0, 3)))])


class TestEmpiricalRisk(unittest.TestCase):
    def setUp(self):
        self.train, _ = generate_synthetic(SyntheticSpec(3, per_class_train=5, per_class_test=1, height=8, width=8), seed=1)
        self.model = build_model(ModelSpec("mlp", 3, (3, 8, 8), (6,), eligible_mix_layers=(0, 1)))
        for tensor in self.model.parameters().values():
            tensor.values = np.zeros_like(tensor.values)

    def test_uniform_model(self):
        pipelines = {
            "identity": IDENTITY,
            "mixup": AugPipeline(Moderate(0.5, 2), Mixup(1.0)),
            "cutmix": AugPipeline(Moderate(0.5, 2), CutMix(1.0)),
        }
        for name, pipeline in pipelines.items():
            with self.subTest(pipeline=name):
                risk = empirical_risk(self.model, self.train, pipeline, RngStream(4), batch_size=4)
                self.assertAlmostEqual(risk, np.log(3), places=6)

    def test_augmented_needs_rng(self):
        with self.assertRaises(ValueError):
            empirical_risk(self.model, self.train, AugPipeline(Moderate(), Mixup()))

    def test_deterministic(self):
        pipeline = AugPipeline(Moderate(0.5, 2), Mixup(1.0))
        model = build_model(ModelSpec("mlp", 3, (3, 8, 8), (6,)), seed=2)
        a = empirical_risk(model, self.train, pipeline, RngStream(9), batch_size=4)
        b = empirical_risk(model, self.train, pipeline, RngStream(9), batch_size=4)
        self.assertEqual(a, b)


if __name__ == "__main__":
    unittest.main()
