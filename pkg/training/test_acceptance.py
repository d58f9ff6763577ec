"""
Desk-scale trend checks on the shipped Mixup recipe (configs/mixup.json).

Five seeds of N=40 + M=10 epochs take several CPU-minutes, so these only run
with RUN_SLOW=1.
"""

import os
import unittest

import numpy as np

from cli.config import load_datasets, load_run_config

from .refine import gradual_refined_training, refined_training

RECIPE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "configs", "mixup.json")
SEEDS = (0, 1, 2, 3, 4)


@unittest.skipUnless(os.getenv("RUN_SLOW") == "1", "set RUN_SLOW=1 to run desk-scale training")
class TestRefinementTrends(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = load_run_config(RECIPE)
        cls.splits = load_datasets(cls.config.dataset)
        cls.spec = cls.config.model_spec(cls.splits)
        cls.n = cls.config.stage.augment_epochs
        cls.m = cls.config.stage.refine_epochs
        cls.runs = [
            refined_training(cls.config.stage_for(seed), cls.splits, cls.spec, progress=False) for seed in SEEDS
        ]

    def _at(self, epoch):
        return [run.records[epoch] for run in self.runs]

    def test_recipe_shape(self):
        self.assertEqual((self.n, self.m), (40, 10))
        self.assertEqual(self.config.stage.stage1_pipeline.method, "mixup")

    def test_augmented_risk_exceeds_clean_at_boundary(self):
        wins = sum(r.risk_aug > r.risk_clean for r in self._at(self.n))
        self.assertGreaterEqual(wins, 4)

    def test_refinement_lowers_clean_risk(self):
        wins = sum(end.risk_clean < start.risk_clean for start, end in zip(self._at(self.n), self._at(self.n + self.m)))
        self.assertGreaterEqual(wins, 4)

    def test_refinement_does_not_hurt_test_metrics(self):
        start, end = self._at(self.n), self._at(self.n + self.m)
        acc_start = np.median([r.test_acc for r in start])
        acc_end = np.median([r.test_acc for r in end])
        self.assertGreaterEqual(acc_end, acc_start - 0.01)
        self.assertLessEqual(np.median([r.test_loss for r in end]), np.median([r.test_loss for r in start]))

    def test_gradual_weakening_matches_refinement(self):
        gradual = [
            gradual_refined_training(self.config.stage_for(seed), self.splits, self.spec, progress=False)
            for seed in SEEDS
        ]
        plain_acc = np.median([run.records[-1].test_acc for run in self.runs])
        gradual_acc = np.median([run.records[-1].test_acc for run in gradual])
        self.assertLessEqual(abs(plain_acc - gradual_acc), 0.02)


if __name__ == "__main__":
    unittest.main()
