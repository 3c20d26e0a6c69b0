import io
import itertools
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase

from ingest.records import write_runs
from utils.exceptions import ArgumentError, FitError, ScopeError
from utils.testing import make_run, run_config

from .baselines import BaselineSet
from .chinchilla import (
    ChinchillaFit,
    fit_chinchilla,
    huber_objective,
    predict_chinchilla,
    residual_target,
    start_grid,
)
from .frontier import FrontierPoint, select_best_per_group
from .powerlaw import fit_power_law, predict_power_law

REALISTIC = ChinchillaFit(E=1.7, A=6.0, B=1.2, alpha=0.34, beta=0.28)
LARGE = ChinchillaFit(E=1.8, A=300.0, B=410.0, alpha=0.34, beta=0.28)


def law_points(fit, model_sizes, data_sizes, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    points = []
    for n, d in itertools.product(model_sizes, data_sizes):
        loss = predict_chinchilla(fit, n, d) + (rng.normal(0.0, noise) if noise else 0.0)
        points.append(FrontierPoint(N=n, D=d, best_loss=loss, best_config=None))
    return points


def law_runs(fit, model_sizes=(100.0, 150.0, 200.0, 300.0, 450.0), data_sizes=(2.0, 5.0, 20.0, 60.0), **overrides):
    return [
        make_run(f"{overrides.get('optimizer', 'adamw')}-{n:g}-{d:g}", predict_chinchilla(fit, n, d),
                 model_size_N=n, data_size_D=d, **overrides)
        for n, d in itertools.product(model_sizes, data_sizes)
    ]


def assert_predictions_close(test, fit, truth, model_sizes, data_sizes, rel):
    for n, d in itertools.product(model_sizes, data_sizes):
        expected = predict_chinchilla(truth, n, d)
        test.assertLessEqual(abs(predict_chinchilla(fit, n, d) - expected) / expected, rel, (n, d))


class SelectBestPerGroupTest(SimpleTestCase):
    def test_single_run(self):
        points = select_best_per_group([make_run("a", 3.1)])
        self.assertEqual(len(points), 1)
        self.assertEqual(points[0].best_loss, 3.1)

    def test_minimum_loss_wins(self):
        points = select_best_per_group([make_run("a", 3.1), make_run("b", 3.0)])
        self.assertEqual((points[0].best_loss, points[0].run_id), (3.0, "b"))

    def test_one_point_per_size_pair(self):
        runs = [make_run("a", 3.0), make_run("b", 3.2, model_size_N=130.0), make_run("c", 3.1, data_size_D=50.0),
                make_run("d", 3.3, data_size_D=50.0)]
        self.assertEqual(len(select_best_per_group(runs)), 3)

    def test_ties_break_by_run_id(self):
        points = select_best_per_group([make_run("z", 3.0), make_run("m", 3.0)])
        self.assertEqual(points[0].run_id, "m")

    def test_scope_restricts_runs(self):
        runs = [make_run("a", 3.0), make_run("b", 2.0, optimizer="lion"), make_run("c", 2.5, source="marin")]
        self.assertEqual(select_best_per_group(runs, ("steplaw", "adamw"))[0].run_id, "a")
        self.assertEqual(select_best_per_group(runs, ("steplaw", None))[0].run_id, "b")


class PredictChinchillaTest(SimpleTestCase):
    def test_zero_coefficients_give_irreducible_loss(self):
        fit = ChinchillaFit(E=2.0, A=0.0, B=0.0, alpha=0.3, beta=0.3)
        self.assertEqual(predict_chinchilla(fit, 100.0, 10.0), 2.0)
        self.assertEqual(predict_chinchilla(fit, 1000.0, 1.0), 2.0)

    def test_unit_exponent_halves_term(self):
        fit = ChinchillaFit(E=1.0, A=10.0, B=0.0, alpha=1.0, beta=0.5)
        self.assertAlmostEqual(predict_chinchilla(fit, 200.0, 1.0) - 1.0, (predict_chinchilla(fit, 100.0, 1.0) - 1.0) / 2)

    def test_closed_form(self):
        expected = 1.8 + 300.0 * math.exp(-0.34 * math.log(268.0)) + 410.0 * math.exp(-0.28 * math.log(25.0))
        self.assertAlmostEqual(predict_chinchilla(LARGE, 268.0, 25.0), expected, places=10)

    def test_non_positive_sizes_rejected(self):
        with self.assertRaises(ArgumentError):
            predict_chinchilla(LARGE, 0.0, 25.0)
        with self.assertRaises(ArgumentError):
            predict_chinchilla(LARGE, 268.0, -1.0)

    def test_strictly_decreasing_in_both_sizes(self):
        sizes = np.array([50.0, 100.0, 200.0, 400.0])
        self.assertTrue(np.all(np.diff(predict_chinchilla(REALISTIC, sizes, 10.0)) < 0))
        self.assertTrue(np.all(np.diff(predict_chinchilla(REALISTIC, 100.0, sizes)) < 0))

    def test_serialization_keeps_scope(self):
        fit = ChinchillaFit(E=1.7, A=6.0, B=1.2, alpha=0.34, beta=0.28, scope=("marin", "soap"))
        self.assertEqual(ChinchillaFit.from_dict(fit.to_dict()), fit)


class ResidualTargetTest(SimpleTestCase):
    def test_baseline_loss_has_zero_residual(self):
        baseline = predict_chinchilla(REALISTIC, 268.0, 25.0)
        self.assertEqual(residual_target(baseline, REALISTIC, 268.0, 25.0), 0.0)

    def test_offset_is_recovered(self):
        baseline = predict_chinchilla(REALISTIC, 268.0, 25.0)
        self.assertAlmostEqual(residual_target(baseline + 0.1, REALISTIC, 268.0, 25.0), 0.1, places=12)

    def test_round_trip(self):
        for loss in (2.5, 3.0235, 4.0):
            residual = residual_target(loss, REALISTIC, 180.0, 7.5)
            self.assertAlmostEqual(residual + predict_chinchilla(REALISTIC, 180.0, 7.5), loss, places=12)


class FitChinchillaTest(SimpleTestCase):
    MODEL_SIZES = (100.0, 150.0, 200.0, 300.0, 450.0)
    DATA_SIZES = (2.0, 5.0, 10.0, 20.0, 60.0)

    def test_noiseless_recovery(self):
        fit = fit_chinchilla(law_points(REALISTIC, self.MODEL_SIZES, self.DATA_SIZES))
        assert_predictions_close(self, fit, REALISTIC, self.MODEL_SIZES, self.DATA_SIZES, 1e-3)

    def test_noiseless_recovery_with_large_coefficients(self):
        model_sizes, data_sizes = (100.0, 200.0, 300.0, 400.0), (2.0, 10.0, 20.0, 40.0)
        fit = fit_chinchilla(law_points(LARGE, model_sizes, data_sizes))
        assert_predictions_close(self, fit, LARGE, model_sizes, data_sizes, 1e-3)

    def test_noisy_recovery(self):
        fit = fit_chinchilla(law_points(REALISTIC, self.MODEL_SIZES, self.DATA_SIZES, noise=0.01, seed=4))
        assert_predictions_close(self, fit, REALISTIC, self.MODEL_SIZES, self.DATA_SIZES, 2e-2)

    def test_constant_losses_reach_asymptote(self):
        sizes = (1e6, 2e6, 4e6)
        points = [FrontierPoint(N=n, D=d, best_loss=2.0, best_config=None) for n, d in itertools.product(sizes, sizes)]
        fit = fit_chinchilla(points)
        for point in points:
            self.assertAlmostEqual(predict_chinchilla(fit, point.N, point.D), 2.0, delta=2e-3)
        self.assertLessEqual(fit.E, 2.0 * (1 + 1e-3))

    def test_refit_on_own_predictions(self):
        first = fit_chinchilla(law_points(REALISTIC, self.MODEL_SIZES, self.DATA_SIZES, noise=0.01, seed=1))
        second = fit_chinchilla(law_points(first, self.MODEL_SIZES, self.DATA_SIZES))
        assert_predictions_close(self, second, first, self.MODEL_SIZES, self.DATA_SIZES, 5e-4)

    def test_objective_no_worse_than_any_start(self):
        points = law_points(REALISTIC, self.MODEL_SIZES, self.DATA_SIZES, noise=0.01, seed=2)
        fit = fit_chinchilla(points)
        N = np.log([point.N for point in points])
        D = np.log([point.D for point in points])
        losses = np.array([point.best_loss for point in points])
        starts = huber_objective(start_grid(N, D, losses), N, D, np.log(losses), 1e-3)
        self.assertLessEqual(fit.objective, starts.min())

    def test_too_few_points(self):
        with self.assertRaises(FitError):
            fit_chinchilla(law_points(REALISTIC, (100.0, 200.0), (2.0, 5.0)))

    def test_single_model_size_is_degenerate(self):
        with self.assertRaises(FitError):
            fit_chinchilla(law_points(REALISTIC, (100.0,), (2.0, 5.0, 10.0, 20.0, 60.0)))


def power_law_point(n, d, lr, batch_size):
    config = run_config(model_size_N=n, data_size_D=d, peak_lr=lr, batch_size=batch_size, min_lr=None)
    return FrontierPoint(N=n, D=d, best_loss=3.0, best_config=config)


class FitPowerLawTest(SimpleTestCase):
    def test_exact_recovery(self):
        frontier = [
            power_law_point(n, d, 0.01 * n**-0.25 * d**0.1, int(25.6 * d))
            for n, d in ((100.0, 10.0), (200.0, 20.0), (400.0, 10.0), (300.0, 40.0))
        ]
        fit = fit_power_law(frontier)
        for value, expected in ((fit.c, 0.01), (fit.alpha_lr, -0.25), (fit.beta_lr, 0.1), (fit.d, 25.6),
                                (fit.gamma_bs, 1.0)):
            self.assertLessEqual(abs(value - expected) / abs(expected), 1e-8)

    def test_constant_learning_rate(self):
        frontier = [power_law_point(n, d, 0.003, 512) for n, d in ((100.0, 10.0), (200.0, 20.0), (400.0, 10.0))]
        fit = fit_power_law(frontier)
        self.assertAlmostEqual(fit.alpha_lr, 0.0, places=10)
        self.assertAlmostEqual(fit.beta_lr, 0.0, places=10)
        self.assertAlmostEqual(fit.c, 0.003, places=12)

    def test_batch_size_doubling_with_data(self):
        frontier = [power_law_point(100.0, 10.0, 0.003, 256), power_law_point(200.0, 20.0, 0.002, 512),
                    power_law_point(400.0, 10.0, 0.001, 256)]
        fit = fit_power_law(frontier)
        self.assertAlmostEqual(fit.gamma_bs, 1.0, places=10)
        self.assertAlmostEqual(fit.d, 25.6, places=8)
        self.assertAlmostEqual(predict_power_law(fit, 100.0, 10.0)[1], 256.0, places=6)

    def test_collinear_sizes_are_rank_deficient(self):
        frontier = [power_law_point(n, n / 10, 0.003, 512) for n in (100.0, 200.0, 400.0)]
        with self.assertRaises(FitError):
            fit_power_law(frontier)

    def test_too_few_points(self):
        with self.assertRaises(FitError):
            fit_power_law([power_law_point(100.0, 10.0, 0.003, 512)])


class BaselineSetTest(SimpleTestCase):
    def test_per_source_scope(self):
        baselines = BaselineSet.fit(law_runs(REALISTIC))
        self.assertEqual(baselines.scopes(), [("steplaw", None)])
        config = run_config(model_size_N=268.0, data_size_D=25.0, optimizer="lion")
        self.assertAlmostEqual(baselines.predict(config), predict_chinchilla(REALISTIC, 268.0, 25.0), delta=5e-3)
        with self.assertRaises(ScopeError):
            baselines.predict(run_config(source="marin"))

    def test_per_optimizer_skips_thin_scopes(self):
        runs = law_runs(REALISTIC) + law_runs(REALISTIC, model_sizes=(100.0,), data_sizes=(2.0, 5.0), optimizer="lion")
        baselines = BaselineSet.fit(runs, per_optimizer=True)
        self.assertEqual(baselines.scopes(), [("steplaw", "adamw")])
        with self.assertRaises(ScopeError):
            baselines.baseline_for(run_config(optimizer="lion"))

    def test_residual_and_serialization(self):
        baselines = BaselineSet([ChinchillaFit(**REALISTIC.params(), scope=("steplaw", None))])
        restored = BaselineSet.from_dict(json.loads(json.dumps(baselines.to_dict())))
        config = run_config()
        self.assertEqual(restored.predict(config), baselines.predict(config))
        self.assertAlmostEqual(restored.residual(baselines.predict(config) + 0.02, config), 0.02, places=12)


class FitCommandTest(SimpleTestCase):
    def test_writes_one_file_per_scope(self):
        with tempfile.TemporaryDirectory() as tmp:
            runs_path = write_runs(law_runs(REALISTIC), Path(tmp) / "runs.jsonl")
            out = io.StringIO()
            call_command("fit", "--input", str(runs_path), "--output", tmp, stdout=out)
            summary = json.loads(out.getvalue().strip().splitlines()[-1])
            self.assertIn("chinchilla_steplaw.json", summary["data"]["baselines"])
            fitted = json.loads((Path(tmp) / "chinchilla_steplaw.json").read_text())
            self.assertEqual(fitted["scope"], {"source": "steplaw", "optimizer": None})
            self.assertTrue((Path(tmp) / "baselines.json").exists())
