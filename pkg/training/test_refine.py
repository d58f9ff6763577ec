import os
import tempfile
import unittest
from dataclasses import replace
from unittest import mock

import numpy as np

from augment.pipeline import NO_MODERATE, AugPipeline, CutMix, Mixup, Moderate
from dataset.rng import RngStream
from dataset.samples import Dataset, one_hot_matrix
from dataset.synthetic import SyntheticSpec, generate_synthetic
from metrics.risk import IDENTITY, empirical_risk
from network.loss import softmax
from network.model import ModelSpec, build_model, forward
from network.optim import OptimState

from .refine import (
    ContinueFinal,
    CosineRestart,
    DataSplits,
    FixedLr,
    StageConfig,
    TrainingAbort,
    evaluate,
    fixed_budget_sweep,
    gradual_refined_training,
    refined_training,
    train_epoch,
)
from .schedules import Constant, Step


def _splits():
    train, test = generate_synthetic(SyntheticSpec(4, per_class_train=6, per_class_test=3, height=8, width=8), seed=0)
    return DataSplits(train, test)


def _spec(**kw):
    base = dict(kind="small_convnet", num_classes=4, input_shape=(3, 8, 8), widths=(4,), eligible_mix_layers=(0, 1))
    base.update(kw)
    return ModelSpec(**base)


def _config(**kw):
    base = dict(
        augment_epochs=2,
        refine_epochs=1,
        stage1_pipeline=AugPipeline(Moderate(0.5, 2), Mixup(1.0)),
        stage2_pipeline=AugPipeline(Moderate(0.5, 2)),
        schedule=Step(0.05, [1], 0.1),
        batch_size=8,
        seed=3,
    )
    base.update(kw)
    return StageConfig(**base)


def _params(model):
    return {k: t.values.copy() for k, t in model.parameters().items()}


class TestStageConfig(unittest.TestCase):
    def test_rejects_empty_run(self):
        with self.assertRaises(ValueError):
            _config(augment_epochs=0, refine_epochs=0)

    def test_rejects_intensive_stage2(self):
        with self.assertRaises(ValueError):
            _config(stage2_pipeline=AugPipeline(Moderate(), CutMix(0.5)))

    def test_gradual_needs_refinement(self):
        with self.assertRaises(ValueError):
            _config(refine_epochs=0, gradual=True)

    def test_refinement_lr_rules(self):
        config = _config(augment_epochs=3, refine_epochs=4)
        self.assertEqual([config.lr_for(e) for e in range(4, 8)], [0.005] * 4)
        fixed = replace(config, refine_lr=FixedLr())
        self.assertEqual(fixed.lr_for(5), 0.05 / 1000)
        restart = replace(config, refine_lr=CosineRestart(0.1, 0.0))
        lrs = [restart.lr_for(e) for e in range(4, 8)]
        self.assertEqual(lrs[0], 0.1)
        self.assertTrue(all(b < a for a, b in zip(lrs, lrs[1:])))

    def test_gradual_scales(self):
        config = _config(augment_epochs=1, refine_epochs=4, gradual=True)
        scales = [config.pipeline_for(e).intensity_scale for e in range(2, 6)]
        self.assertEqual(scales, [0.75, 0.5, 0.25, 0.0])
        self.assertIsNone(config.pipeline_for(5).intensive)
        self.assertEqual(config.pipeline_for(2).intensive, Mixup(0.75))


class TestEvaluate(unittest.TestCase):
    def _uniform_model(self, shape, classes):
        model = build_model(ModelSpec("mlp", classes, shape, (), eligible_mix_layers=(0,)))
        for tensor in model.parameters().values():
            tensor.values = np.zeros_like(tensor.values)
        return model

    def test_uniform_logits(self):
        splits = _splits()
        result = evaluate(self._uniform_model((3, 8, 8), 4), splits.test)
        self.assertAlmostEqual(result.loss, np.log(4), places=6)
        # Ties go to class 0, a quarter of the balanced set.
        self.assertEqual(result.top1_accuracy, 0.25)

    def test_matches_confusion_matrix(self):
        splits = _splits()
        model = build_model(_spec(), seed=1)
        result = evaluate(model, splits.test)
        logits, _ = forward(model, np.asarray(splits.test.images), mode="eval")
        confusion = np.zeros((4, 4), dtype=int)
        for truth, guess in zip(splits.test.class_indices, np.argmax(logits, axis=1)):
            confusion[truth, guess] += 1
        self.assertEqual(result.top1_accuracy, np.trace(confusion) / confusion.sum())

    def test_identity_risk_equals_evaluate_loss(self):
        splits = _splits()
        model = build_model(_spec(), seed=2)
        self.assertEqual(empirical_risk(model, splits.train, IDENTITY), evaluate(model, splits.train).loss)


class TestTrainEpoch(unittest.TestCase):
    def test_zero_lr_leaves_parameters(self):
        splits = _splits()
        spec = _spec(kind="mlp", widths=(6,))
        model = build_model(spec, seed=0)
        before = _params(model)
        loss = train_epoch(
            model, splits.train, AugPipeline(NO_MODERATE), 0.0, OptimState(0.0), RngStream(0), batch_size=5
        )
        for name, value in _params(model).items():
            np.testing.assert_array_equal(value, before[name])
        self.assertAlmostEqual(loss, evaluate(model, splits.train).loss, places=5)

    def test_two_sample_oracle(self):
        x = np.array([[[[0.2, 0.9]]], [[[0.7, 0.1]]]], dtype=np.float32)
        y = one_hot_matrix([0, 1], 2)
        dataset = Dataset(x, y, "pair")
        spec = ModelSpec("mlp", 2, (1, 1, 2), (), eligible_mix_layers=(0,), dtype="float64")
        model = build_model(spec, seed=5)
        w0 = model.parameters()["0.2.weight"].values.copy()
        b0 = model.parameters()["0.2.bias"].values.copy()

        lr = 0.5
        train_epoch(model, dataset, AugPipeline(NO_MODERATE), lr, OptimState(lr, 0.0, 0.0), RngStream(1), 2)

        inputs = x.reshape(2, 2).astype(np.float64)
        p = softmax(inputs @ w0 + b0)
        np.testing.assert_allclose(model.parameters()["0.2.weight"].values, w0 - lr * inputs.T @ (p - y) / 2, atol=1e-12)
        np.testing.assert_allclose(model.parameters()["0.2.bias"].values, b0 - lr * (p - y).mean(axis=0), atol=1e-12)

    def test_non_finite_loss_aborts(self):
        splits = _splits()
        with mock.patch("training.refine.soft_ce_loss", return_value=float("nan")):
            with self.assertRaises(TrainingAbort) as ctx:
                train_epoch(build_model(_spec()), splits.train, AugPipeline(), 0.1, OptimState(0.1), RngStream(0), 8, epoch=4)
        self.assertEqual((ctx.exception.epoch, ctx.exception.batch_index, ctx.exception.lr), (4, 0, 0.1))


class TestRefinedTraining(unittest.TestCase):
    def test_records_and_stages(self):
        result = refined_training(_config(), _splits(), _spec(), progress=False)
        self.assertEqual([r.epoch for r in result.records], [0, 1, 2, 3])
        self.assertEqual([r.stage for r in result.records], ["init", "augment", "augment", "refine"])
        self.assertEqual([r.lr for r in result.records[1:]], [0.05, 0.005, 0.005])
        self.assertEqual(result.records[3].intensity_scale, 0.0)
        self.assertEqual(result.method, "mixup")

    def test_deterministic(self):
        a = refined_training(_config(), _splits(), _spec(), progress=False)
        b = refined_training(_config(), _splits(), _spec(), progress=False)
        self.assertEqual(a.records, b.records)
        for name, value in _params(a.model).items():
            np.testing.assert_array_equal(value, _params(b.model)[name])

    def test_no_augmentation_stage_equals_moderate_training(self):
        splits, spec = _splits(), _spec()
        refine_only = _config(augment_epochs=0, refine_epochs=2, schedule=Constant(0.05), refine_lr=FixedLr(0.05))
        moderate = _config(
            augment_epochs=2, refine_epochs=0, schedule=Constant(0.05), stage1_pipeline=AugPipeline(Moderate(0.5, 2))
        )
        a = refined_training(refine_only, splits, spec, progress=False)
        b = refined_training(moderate, splits, spec, progress=False)
        for name, value in _params(a.model).items():
            np.testing.assert_array_equal(value, _params(b.model)[name])
        self.assertEqual(a.records[-1].test_acc, b.records[-1].test_acc)

    def test_no_refinement(self):
        result = refined_training(_config(refine_epochs=0), _splits(), _spec(), progress=False)
        self.assertNotIn("refine", [r.stage for r in result.records])

    def test_gradual_records(self):
        config = _config(augment_epochs=1, refine_epochs=4)
        result = gradual_refined_training(config, _splits(), _spec(), progress=False)
        self.assertEqual([r.intensity_scale for r in result.records[2:]], [0.75, 0.5, 0.25, 0.0])

    def test_best_state_has_best_accuracy(self):
        splits = _splits()
        result = refined_training(_config(), splits, _spec(), progress=False)
        self.assertEqual(result.best_test_acc, max(r.test_acc for r in result.records))
        self.assertEqual(evaluate(result.best_model(), splits.test).top1_accuracy, result.best_test_acc)

    def test_checkpoints_and_resume(self):
        splits, spec = _splits(), _spec()
        with tempfile.TemporaryDirectory() as full_dir, tempfile.TemporaryDirectory() as part_dir:
            full = refined_training(_config(), splits, spec, out_dir=full_dir, progress=False)
            for name in ("last.npz", "best.npz", "final.npz"):
                self.assertTrue(os.path.exists(os.path.join(full_dir, name)))

            refined_training(_config(refine_epochs=0), splits, spec, out_dir=part_dir, progress=False)
            resumed = refined_training(
                _config(), splits, spec, out_dir=part_dir, resume_from=os.path.join(part_dir, "last.npz"), progress=False
            )
        self.assertEqual(resumed.records, full.records)
        for name, value in _params(full.model).items():
            np.testing.assert_array_equal(value, _params(resumed.model)[name])

    def test_fixed_budget_sweep(self):
        results = fixed_budget_sweep(_config(), _splits(), _spec(), total_epochs=3, refine_list=[0, 1], progress=False)
        self.assertEqual(sorted(results), [0, 1])
        for m, result in results.items():
            self.assertEqual(len(result.records), 4)
            self.assertEqual(sum(r.stage == "refine" for r in result.records), m)
        # Epoch 1 is an augmentation epoch in both runs and shares its streams.
        self.assertEqual(results[0].records[1], results[1].records[1])

    def test_sweep_rejects_bad_list_before_training(self):
        for refine_list in ([0, 4], [1, 1], [], [-1, 0]):
            with self.subTest(refine_list=refine_list):
                with mock.patch("training.refine.refined_training") as run:
                    with self.assertRaises(ValueError):
                        fixed_budget_sweep(_config(), _splits(), _spec(), 3, refine_list, progress=False)
                run.assert_not_called()

    def test_continue_final_lr_constant(self):
        config = _config(augment_epochs=2, refine_epochs=2, refine_lr=ContinueFinal())
        result = refined_training(config, _splits(), _spec(), progress=False)
        refine = [r.lr for r in result.records if r.stage == "refine"]
        self.assertEqual(refine, [0.005, 0.005])


if __name__ == "__main__":
    unittest.main()
