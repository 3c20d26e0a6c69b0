import io
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from evaluation.predictors import ChinchillaPredictor
from lawfit.baselines import BaselineSet
from synth.generate import synthetic_config
from synth.oracle import OracleParams, OraclePredictor, oracle_loss
from utils.exceptions import ArgumentError, SweepError

from .advisor import PowerLawAdvisor, crossing_point, loss_profile
from .grid import SweepAxis, SweepGrid
from .sweep import recommend, refine_optimum, retarget, sweep

N, D = 268.0, 5.36
BATCHES = (64, 128, 256, 512, 1024, 2048)


def base_config():
    return synthetic_config(N, D, "adamw", 1e-3, 256, 0.1)


def oracle_grid(base=None):
    return SweepGrid(base or base_config(),
                     (SweepAxis.log_spaced("peak_lr", 1e-4, 1e-2, 13), SweepAxis("batch_size", BATCHES)))


def bowl_surface(lr_star, batch_star, curvature=((0.04, 0.01), (0.01, 0.02)), batches=BATCHES):
    matrix = np.asarray(curvature)
    surface = []
    for lr in np.geomspace(1e-4, 1e-2, 13):
        for batch in batches:
            offset = np.array([math.log(lr / lr_star), math.log(batch / batch_star)])
            surface.append((lr, batch, 3.0 + float(offset @ matrix @ offset)))
    return surface


class ShiftedPredictor:
    def __init__(self, predictor, shift):
        self.predictor = predictor
        self.shift = shift

    def predict_losses(self, configs):
        return self.predictor.predict_losses(configs) + self.shift


class SweepGridTest(SimpleTestCase):
    def test_points_enumerate_product(self):
        grid = oracle_grid()
        points = list(grid.points())
        self.assertEqual(len(points), grid.size)
        self.assertEqual(grid.size, 13 * len(BATCHES))
        self.assertEqual(points[1][1]["batch_size"], BATCHES[1])
        self.assertEqual([index for index, _ in points], list(range(grid.size)))

    def test_integer_axes_rounded(self):
        axis = SweepAxis.log_spaced("batch_size", 64, 2048, 6)
        self.assertEqual(axis.values, BATCHES)

    def test_invalid_axes(self):
        with self.assertRaises(ArgumentError):
            SweepAxis("not_a_field", (1.0,))
        with self.assertRaises(ArgumentError):
            SweepAxis("peak_lr", ())
        with self.assertRaises(ArgumentError):
            SweepGrid(base_config(), (SweepAxis("peak_lr", (1e-3,)), SweepAxis("peak_lr", (2e-3,))))

    def test_without(self):
        self.assertEqual(oracle_grid().without({"batch_size"}).fields, ("peak_lr",))


class SweepTest(SimpleTestCase):
    def test_single_point_grid(self):
        grid = SweepGrid(base_config(), (SweepAxis("peak_lr", (1e-3,)), SweepAxis("batch_size", (256,))))
        rec = recommend(OraclePredictor(OracleParams()), N, D, grid)
        self.assertEqual((rec.config.peak_lr, rec.config.batch_size), (1e-3, 256))
        self.assertFalse(rec.refined)
        self.assertEqual(rec.relative_loss, 0.0)

    def test_ascending_and_exhaustive(self):
        result = sweep(OraclePredictor(OracleParams()), oracle_grid())
        losses = [point.loss for point in result.surface]
        self.assertEqual(losses, sorted(losses))
        self.assertEqual(sorted(point.index for point in result.surface), list(range(oracle_grid().size)))

    def test_ties_keep_grid_order(self):
        predictor = ChinchillaPredictor(BaselineSet([OracleParams().chinchilla]))
        result = sweep(predictor, oracle_grid())
        self.assertEqual([point.index for point in result.surface], list(range(oracle_grid().size)))
        rec = recommend(predictor, N, D, oracle_grid())
        self.assertEqual((rec.config.peak_lr, rec.config.batch_size), (1e-4, 64))
        self.assertFalse(rec.refined)
        self.assertTrue(all(relative == 0.0 for _, relative in rec.relative_losses()))

    def test_invalid_points_skipped(self):
        grid = SweepGrid(base_config(), (SweepAxis("peak_lr", (1e-4, 1e-3)), SweepAxis("min_lr", (5e-4,))))
        result = sweep(OraclePredictor(OracleParams()), grid)
        self.assertEqual(len(result.surface) + len(result.skipped), grid.size)
        [(index, values, _)] = result.skipped
        self.assertEqual((index, values["peak_lr"]), (0, 1e-4))

    def test_all_points_invalid(self):
        grid = SweepGrid(base_config(), (SweepAxis("peak_lr", (1e-4, 2e-4)), SweepAxis("min_lr", (5e-4,))))
        with self.assertRaises(SweepError):
            sweep(OraclePredictor(OracleParams()), grid)


class RecommendTest(SimpleTestCase):
    def setUp(self):
        self.params = OracleParams()
        self.predictor = OraclePredictor(self.params)

    def test_best_grid_point_is_grid_argmin(self):
        rec = recommend(self.predictor, N, D, oracle_grid())
        base = retarget(base_config(), N, D)
        losses = [oracle_loss(self.params, base.with_values(**values)) for _, values in oracle_grid().points()]
        self.assertAlmostEqual(rec.best_grid_loss, min(losses), places=12)

    def test_refines_to_oracle_optimum(self):
        rec = recommend(self.predictor, N, D, oracle_grid())
        lr_star, batch_star = self.params.optimum(N, D)
        self.assertTrue(rec.refined, rec.note)
        self.assertAlmostEqual(rec.refined_point[0] / lr_star, 1.0, places=6)
        self.assertAlmostEqual(rec.refined_point[1] / batch_star, 1.0, places=6)
        self.assertEqual(rec.config.batch_size, round(batch_star))
        self.assertLessEqual(rec.predicted_loss, rec.best_grid_loss)

    def test_retargets_model_and_data_size(self):
        rec = recommend(self.predictor, 430.0, 8.6, oracle_grid())
        self.assertEqual((rec.config.model_size_N, rec.config.data_size_D), (430.0, 8.6))

    def test_fixed_batch_size(self):
        rec = recommend(self.predictor, N, D, oracle_grid(), constraints={"batch_size": 256})
        self.assertTrue(all(config.batch_size == 256 for config, _ in rec.relative_losses()))
        self.assertEqual(len(rec.predicted_surface), 13)
        self.assertEqual(rec.config.batch_size, 256)
        lr_star, batch_star = self.params.optimum(N, D)
        expected = lr_star * math.exp(-math.log(256 / batch_star) / 4)
        self.assertTrue(rec.refined, rec.note)
        self.assertAlmostEqual(rec.config.peak_lr / expected, 1.0, places=6)

    def test_every_axis_fixed(self):
        rec = recommend(self.predictor, N, D, oracle_grid(), constraints={"batch_size": 256, "peak_lr": 2e-3})
        self.assertEqual((rec.config.peak_lr, rec.config.batch_size), (2e-3, 256))
        self.assertEqual(len(rec.predicted_surface), 1)

    def test_invalid_constraint(self):
        with self.assertRaises(SweepError):
            recommend(self.predictor, N, D, oracle_grid(), constraints={"batch_size": 0})

    def test_constant_shift_keeps_argmin(self):
        plain = recommend(self.predictor, N, D, oracle_grid())
        shifted = recommend(ShiftedPredictor(self.predictor, 0.5), N, D, oracle_grid())
        self.assertEqual(plain.best_grid_config, shifted.best_grid_config)

    def test_summary(self):
        summary = recommend(self.predictor, N, D, oracle_grid()).summary()
        self.assertEqual(summary["surface_points"], 13 * len(BATCHES))
        self.assertEqual(summary["skipped_points"], 0)
        self.assertIn("peak_lr", summary["recommended"])


class RefineOptimumTest(SimpleTestCase):
    def test_exact_two_dimensional_quadratic(self):
        refinement = refine_optimum(bowl_surface(1.3e-3, 300.0), near_frac=0.05)
        self.assertTrue(refinement.refined)
        self.assertAlmostEqual(refinement.lr / 1.3e-3, 1.0, places=6)
        self.assertAlmostEqual(refinement.batch_size / 300.0, 1.0, places=6)

    def test_symmetric_bowl(self):
        refinement = refine_optimum(bowl_surface(1e-3, 256.0, curvature=((0.05, 0.0), (0.0, 0.05))), near_frac=0.05)
        self.assertAlmostEqual(refinement.lr, 1e-3, delta=1e-9)
        self.assertAlmostEqual(refinement.batch_size, 256.0, delta=1e-6)

    def test_exact_one_dimensional_quadratic(self):
        refinement = refine_optimum(bowl_surface(1.3e-3, 256.0, batches=(256,)), near_frac=0.05)
        self.assertTrue(refinement.refined)
        self.assertEqual(refinement.note, "1-D")
        self.assertAlmostEqual(refinement.lr / 1.3e-3, 1.0, places=6)
        self.assertEqual(refinement.batch_size, 256.0)

    def test_single_batch_band_on_swept_axis_falls_back(self):
        surface = bowl_surface(1.3e-3, 256.0, curvature=((0.04, 0.0), (0.0, 5.0)))
        refinement = refine_optimum(surface)
        self.assertFalse(refinement.refined)
        best = min(surface, key=lambda point: point[2])
        self.assertEqual((refinement.lr, refinement.batch_size), best[:2])

    def test_flat_surface_falls_back(self):
        surface = [(lr, batch, 3.0) for lr, batch, _ in bowl_surface(1e-3, 256.0)]
        refinement = refine_optimum(surface)
        self.assertFalse(refinement.refined)
        self.assertEqual((refinement.lr, refinement.batch_size), surface[0][:2])

    def test_saddle_falls_back(self):
        surface = bowl_surface(1e-3, 256.0, curvature=((0.04, 0.0), (0.0, -0.02)))
        refinement = refine_optimum(surface, near_frac=0.5)
        self.assertFalse(refinement.refined)
        best = min(surface, key=lambda point: point[2])
        self.assertEqual((refinement.lr, refinement.batch_size), best[:2])

    def test_too_few_points_fall_back(self):
        surface = [(1e-3, 128, 3.0), (2e-3, 128, 3.0), (1e-3, 256, 3.0), (2e-3, 256, 3.0)]
        self.assertFalse(refine_optimum(surface).refined)

    def test_empty_surface(self):
        with self.assertRaises(ArgumentError):
            refine_optimum([])


class AdvisorTest(SimpleTestCase):
    def test_power_law_pick(self):
        params = OracleParams()
        config = PowerLawAdvisor(params.laws).recommend(base_config(), N, D)
        lr_star, batch_star = params.optimum(N, D)
        self.assertEqual(config.peak_lr, lr_star)
        self.assertEqual(config.batch_size, round(batch_star))

    def test_crossing_point(self):
        self.assertEqual(crossing_point([(1.0, 0.0), (2.0, 1.0)], [(1.0, 1.0), (2.0, 0.0)]), (1.5, 0))
        self.assertIsNone(crossing_point([(1.0, 0.0), (2.0, 0.0)], [(1.0, 1.0), (2.0, 1.0)]))
        with self.assertRaises(ArgumentError):
            crossing_point([(1.0, 0.0)], [(2.0, 0.0)])

    def test_weight_decay_crossing_between_optimizers(self):
        predictor = OraclePredictor(OracleParams())
        values = [0.0, 0.2, 0.45, 0.6, 0.8]
        adamw = loss_profile(predictor, base_config(), "weight_decay", values)
        lion = loss_profile(predictor, base_config().with_values(optimizer="lion"), "weight_decay", values)
        value, cell = crossing_point(adamw, lion)
        self.assertEqual(cell, 1)
        self.assertAlmostEqual(value, 0.4, places=9)


class SweepCommandTest(SimpleTestCase):
    def write_inputs(self, tmp):
        baselines = BaselineSet([OracleParams().chinchilla]).save(Path(tmp) / "baselines.json")
        base = Path(tmp) / "base.json"
        base.write_text(json.dumps(base_config().to_dict()))
        return baselines, base

    def test_sweep_writes_surface_and_recommendation(self):
        with tempfile.TemporaryDirectory() as tmp:
            baselines, base = self.write_inputs(tmp)
            law = Path(tmp) / "power_law.json"
            law.write_text(json.dumps(OracleParams().laws.to_dict()))
            out = io.StringIO()
            call_command("sweep", "--checkpoint", str(baselines), "--base", str(base), "--N", "268", "--D", "5.36",
                         "--compare-power-law", str(law), "--output", tmp, stdout=out)
            summary = json.loads(out.getvalue().strip().splitlines()[-1])
            self.assertTrue(summary["success"])
            rows = (Path(tmp) / "surface.tsv").read_text().splitlines()
            self.assertEqual(len(rows), 13 * len(BATCHES) + 1)
            recommendation = json.loads((Path(tmp) / "recommendation.json").read_text())
            self.assertIn("power_law", recommendation)
            self.assertEqual(recommendation["power_law"]["relative_loss"], 0.0)

    def test_fix_flag(self):
        with tempfile.TemporaryDirectory() as tmp:
            baselines, base = self.write_inputs(tmp)
            call_command("sweep", "--checkpoint", str(baselines), "--base", str(base), "--N", "268", "--D", "5.36",
                         "--fix", "batch_size=512", "--output", tmp, stdout=io.StringIO())
            rows = (Path(tmp) / "surface.tsv").read_text().splitlines()[1:]
            self.assertEqual(len(rows), 13)
            self.assertTrue(all(row.split("\t")[3] == "512" for row in rows))

    def test_malformed_fix(self):
        with tempfile.TemporaryDirectory() as tmp:
            baselines, base = self.write_inputs(tmp)
            with self.assertRaises(CommandError) as raised:
                call_command("sweep", "--checkpoint", str(baselines), "--base", str(base), "--N", "268",
                             "--D", "5.36", "--fix", "batch_size", "--output", tmp, stdout=io.StringIO())
            self.assertEqual(raised.exception.returncode, 2)
