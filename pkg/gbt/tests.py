import json
import os
import tempfile
from pathlib import Path
from unittest import skipUnless

import numpy as np
from django.test import SimpleTestCase, tag

from configs.schema import FIELD_SPECS, canonicalize
from ingest.splits import DatasetSplits
from lawfit.baselines import BaselineSet
from lawfit.chinchilla import ChinchillaFit, predict_chinchilla
from regressor.features import FieldLayout
from utils.exceptions import ArgumentError, SchemaError, ScopeError
from utils.testing import make_run, run_config

from .forest import LEAF, FeatureMatrix, GBTParams, fit_gbt, predict_gbt
from .predictor import GBTPredictor, train_gbt

FIT = ChinchillaFit(E=1.7, A=6.0, B=1.2, alpha=0.34, beta=0.28, scope=("steplaw", None))
LEARNING_RATES = [1e-4 * 1.5**k for k in range(12)]


def lr_vectors(lrs=LEARNING_RATES):
    return [canonicalize(run_config(peak_lr=lr)) for lr in lrs]


def bowl(lr):
    return 0.05 * np.log(lr / 1e-3) ** 2


def walk(forest, row):
    """Row-at-a-time tree walk over the stored node arrays."""
    total = forest.base_score
    for tree in forest.trees:
        node = 0
        while tree.feature[node] != LEAF:
            node = tree.left[node] if row[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        total += forest.learning_rate * tree.value[node]
    return total


class FeatureMatrixTest(SimpleTestCase):
    def setUp(self):
        self.matrix_layout = FeatureMatrix.from_layout(FieldLayout.from_schema())

    def test_column_count(self):
        expected = sum(spec.cardinality if spec.kind == "categorical" else 1 for spec in FIELD_SPECS)
        self.assertEqual(len(self.matrix_layout.columns), expected)

    def test_absent_numerical_slots_sort_first(self):
        matrix = self.matrix_layout.build([canonicalize(run_config(weight_decay=None))])
        column = self.matrix_layout.columns.index("weight_decay")
        self.assertEqual(matrix[0, column], -np.inf)

    def test_one_indicator_per_categorical_field(self):
        matrix = self.matrix_layout.build([canonicalize(run_config())])
        optimizer_columns = [i for i, name in enumerate(self.matrix_layout.columns) if name.startswith("optimizer=")]
        self.assertEqual(matrix[0, optimizer_columns].sum(), 1.0)


class FitGBTTest(SimpleTestCase):
    def test_zero_rounds_predict_mean(self):
        targets = bowl(np.array(LEARNING_RATES))
        forest = fit_gbt(lr_vectors(), targets, GBTParams(rounds=0, min_leaf=1))
        self.assertEqual(forest.trees, [])
        for fv in lr_vectors([3e-4, 5e-3]):
            self.assertAlmostEqual(predict_gbt(forest, fv), targets.mean(), places=12)

    def test_single_threshold_fitted_exactly(self):
        targets = np.array([1.0 if lr <= 1e-3 else 0.0 for lr in LEARNING_RATES])
        forest = fit_gbt(lr_vectors(), targets, GBTParams(rounds=1, max_depth=1, learning_rate=1.0, min_leaf=1))
        np.testing.assert_allclose(forest.predict(lr_vectors()), targets, atol=1e-12)
        [tree] = forest.trees
        # peak_lr and min_lr_ratio give the same partition; the lower column wins
        self.assertEqual(forest.matrix_layout.columns[tree.feature[0]], "peak_lr")
        self.assertGreater(tree.threshold[0], LEARNING_RATES[5] * 1e4)
        self.assertLess(tree.threshold[0], LEARNING_RATES[6] * 1e4)
        self.assertEqual(forest.history[-1], 0.0)

    def test_training_error_never_increases(self):
        targets = bowl(np.array(LEARNING_RATES))
        forest = fit_gbt(lr_vectors(), targets, GBTParams(rounds=30, max_depth=2, learning_rate=0.3, min_leaf=2))
        self.assertEqual(len(forest.history), 31)
        for before, after in zip(forest.history, forest.history[1:]):
            self.assertLessEqual(after, before + 1e-12)
        self.assertLess(forest.history[-1], forest.history[0])

    def test_depth_limited(self):
        targets = bowl(np.array(LEARNING_RATES))
        forest = fit_gbt(lr_vectors(), targets, GBTParams(rounds=5, max_depth=2, min_leaf=1))
        self.assertTrue(all(tree.depth <= 2 for tree in forest.trees))

    def test_min_leaf_respected(self):
        targets = bowl(np.array(LEARNING_RATES))
        forest = fit_gbt(lr_vectors(), targets, GBTParams(rounds=3, max_depth=6, min_leaf=3))
        matrix = forest.matrix_layout.build(lr_vectors())
        for tree in forest.trees:
            leaves = [self.leaf_of(tree, row) for row in matrix]
            counts = np.bincount(leaves)
            self.assertTrue(all(count >= 3 for count in counts if count))

    @staticmethod
    def leaf_of(tree, row):
        node = 0
        while tree.feature[node] != LEAF:
            node = tree.left[node] if row[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        return node

    def test_matches_row_walk(self):
        targets = bowl(np.array(LEARNING_RATES))
        forest = fit_gbt(lr_vectors(), targets, GBTParams(rounds=20, max_depth=3, min_leaf=1))
        queries = lr_vectors([1.1e-4, 7e-4, 2.2e-3, 9e-3])
        matrix = forest.matrix_layout.build(queries)
        np.testing.assert_allclose(forest.predict(queries), [walk(forest, row) for row in matrix], rtol=1e-12)

    def test_piecewise_constant_between_training_values(self):
        targets = bowl(np.array(LEARNING_RATES))
        forest = fit_gbt(lr_vectors(), targets, GBTParams(rounds=20, max_depth=3, min_leaf=1))
        lr = LEARNING_RATES[4]
        first, second = forest.predict(lr_vectors([lr * (1 + 1e-6), lr * (1 + 2e-6)]))
        self.assertEqual(first, second)

    def test_deterministic(self):
        targets = bowl(np.array(LEARNING_RATES))
        params = GBTParams(rounds=10, max_depth=3, min_leaf=2)
        self.assertEqual(fit_gbt(lr_vectors(), targets, params).to_dict(),
                         fit_gbt(lr_vectors(), targets, params).to_dict())

    def test_dump(self):
        targets = bowl(np.array(LEARNING_RATES))
        forest = fit_gbt(lr_vectors(), targets, GBTParams(rounds=2, max_depth=1, min_leaf=1))
        dump = forest.dump()
        self.assertTrue(dump.startswith("base_score="))
        self.assertIn("tree 1", dump)
        self.assertIn("leaf=", dump)

    def test_invalid_inputs(self):
        with self.assertRaises(ArgumentError):
            fit_gbt([], [])
        with self.assertRaises(ArgumentError):
            fit_gbt(lr_vectors(), [0.0])
        with self.assertRaises(ArgumentError):
            fit_gbt(lr_vectors()[:4], np.zeros(4), GBTParams(min_leaf=5))
        with self.assertRaises(ArgumentError):
            GBTParams(learning_rate=0.0)


class GBTPredictorTest(SimpleTestCase):
    def runs(self):
        return [make_run(f"lr-{k}", predict_chinchilla(FIT, 268.0, 25.0) + bowl(lr), peak_lr=lr)
                for k, lr in enumerate(LEARNING_RATES)]

    def test_predicts_baseline_plus_residual(self):
        baselines = BaselineSet([FIT])
        predictor = train_gbt(DatasetSplits(train=self.runs()), GBTParams(rounds=5, min_leaf=2), baselines)
        config = run_config(peak_lr=2e-3)
        self.assertAlmostEqual(predictor.predict_final_loss(config),
                               baselines.predict(config) + predict_gbt(predictor.forest, canonicalize(config)),
                               places=12)

    def test_uncovered_source(self):
        runs = self.runs() + [make_run("marin", 3.0, source="marin")]
        with self.assertRaises(ScopeError):
            train_gbt(DatasetSplits(train=runs), GBTParams(rounds=1), BaselineSet([FIT]))

    def test_save_load(self):
        predictor = train_gbt(DatasetSplits(train=self.runs()), GBTParams(rounds=5, min_leaf=2), BaselineSet([FIT]))
        configs = [run_config(peak_lr=lr) for lr in (2e-4, 1e-3, 4e-3)]
        with tempfile.TemporaryDirectory() as tmp:
            path = predictor.save(Path(tmp) / "forest.json")
            np.testing.assert_array_equal(GBTPredictor.load(path).predict_losses(configs),
                                          predictor.predict_losses(configs))
            payload = json.loads(path.read_text())
            payload["schema_hash"] = "stale"
            path.write_text(json.dumps(payload))
            with self.assertRaises(SchemaError):
                GBTPredictor.load(path)


REAL_DATA = os.environ.get("CPLAW_REAL_DATA", "")


@tag("slow")
@skipUnless(REAL_DATA and Path(REAL_DATA).is_file(), "CPLAW_REAL_DATA does not name a run log")
class RealDataGBTTest(SimpleTestCase):
    def test_steplaw_in_distribution(self):
        from django.conf import settings

        from evaluation.metrics import evaluate_split
        from ingest.filters import filter_runs
        from ingest.records import parse_runs
        from ingest.splits import split_dataset

        runs = [run for run in filter_runs(parse_runs(REAL_DATA)).kept if run.source == "steplaw"]
        dataset = split_dataset(runs, ood_threshold_N=430.0, ratio=0.8, seed=0)
        predictor = train_gbt(dataset, GBTParams.from_config(settings.CPLAW["gbt"]), BaselineSet.fit(dataset.train))
        metrics = evaluate_split(predictor, dataset.id_val)
        self.assertLessEqual(metrics.mae, 0.02)
        self.assertGreaterEqual(metrics.spearman_rho, 0.98)
