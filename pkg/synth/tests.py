import io
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase

from ingest.records import parse_runs, write_runs
from lawfit.chinchilla import predict_chinchilla
from utils.exceptions import ArgumentError

from .generate import SynthDesign, generate_synthetic_runs, synthetic_config
from .oracle import OracleParams, curve_loss, oracle_loss

SMALL_DESIGN = SynthDesign(runs_per_scale=4)


class OracleLossTest(SimpleTestCase):
    def setUp(self):
        self.params = OracleParams()

    def test_optimum_equals_chinchilla(self):
        lr_star, batch_star = self.params.optimum(268.0, 25.0)
        self.assertEqual(batch_star, 500.0)
        config = synthetic_config(268.0, 25.0, "adamw", lr_star, 500, 0.1)
        self.assertEqual(oracle_loss(self.params, config), predict_chinchilla(self.params.chinchilla, 268.0, 25.0))

    def test_doubling_lr_with_identity_curvature(self):
        params = OracleParams(curvature=((1.0, 0.0), (0.0, 1.0)))
        lr_star, _ = params.optimum(268.0, 25.0)
        at_optimum = oracle_loss(params, synthetic_config(268.0, 25.0, "adamw", lr_star, 500, 0.1))
        doubled = oracle_loss(params, synthetic_config(268.0, 25.0, "adamw", 2 * lr_star, 500, 0.1))
        self.assertAlmostEqual(doubled - at_optimum, math.log(2) ** 2, places=12)

    def test_large_weight_decay_favours_lion(self):
        lr_star, _ = self.params.optimum(268.0, 25.0)
        adamw = oracle_loss(self.params, synthetic_config(268.0, 25.0, "adamw", lr_star, 500, 0.6))
        lion = oracle_loss(self.params, synthetic_config(268.0, 25.0, "lion", lr_star, 500, 0.6))
        self.assertLess(lion, adamw)

    def test_optimum_is_grid_argmin(self):
        lr_star, batch_star = self.params.optimum(180.0, 3.6)
        grid = [(lr_star * factor, batch) for factor in (0.5, 0.8, 1.0, 1.25, 2.0)
                for batch in (int(batch_star) - 40, int(batch_star), int(batch_star) + 40)]
        losses = [oracle_loss(self.params, synthetic_config(180.0, 3.6, "adamw", lr, batch, 0.1))
                  for lr, batch in grid]
        self.assertEqual(grid[int(np.argmin(losses))], (lr_star, int(batch_star)))

    def test_invalid_curvature_rejected(self):
        with self.assertRaises(ArgumentError):
            OracleParams(curvature=((1.0, 2.0), (2.0, 1.0)))
        with self.assertRaises(ArgumentError):
            OracleParams(noise_sigma=-0.1)

    def test_params_round_trip(self):
        params = OracleParams(noise_sigma=0.01)
        self.assertEqual(OracleParams.from_dict(json.loads(json.dumps(params.to_dict()))), params)


class CurveLossTest(SimpleTestCase):
    def test_curve_ends_at_final_loss(self):
        self.assertEqual(float(curve_loss(OracleParams(), 3.0, 1.0)), 3.0)

    def test_monotone_after_warmup_bump(self):
        fracs = np.linspace(0.01, 1.0, 200)
        losses = curve_loss(OracleParams(), 3.0, fracs, warmup_ratio=0.01)
        self.assertTrue(np.all(np.diff(losses) <= 0))


class GenerateSyntheticRunsTest(SimpleTestCase):
    def test_noiseless_losses_equal_oracle(self):
        params = OracleParams(noise_sigma=0.0)
        for run in generate_synthetic_runs(params, SMALL_DESIGN, seed=0):
            self.assertEqual(run.final_loss, oracle_loss(params, run.config))

    def test_design_geometry(self):
        runs = generate_synthetic_runs(OracleParams(), SMALL_DESIGN, seed=0)
        self.assertEqual(len(runs), 17 * 4)
        self.assertEqual({run.config.model_size_N for run in runs if run.config.model_size_N > 430},
                         {520.0, 1073.0})
        self.assertEqual({run.source for run in runs}, {"synthetic"})

    def test_curves_end_at_final_loss(self):
        for run in generate_synthetic_runs(OracleParams(), SMALL_DESIGN, seed=1):
            self.assertEqual(run.curve[-1], (run.config.total_steps, run.final_loss))
            self.assertTrue(np.all(np.diff(run.steps) > 0))

    def test_fixed_seed_gives_identical_bytes(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = write_runs(generate_synthetic_runs(OracleParams(), SMALL_DESIGN, seed=3), Path(tmp) / "a.jsonl")
            second = write_runs(generate_synthetic_runs(OracleParams(), SMALL_DESIGN, seed=3), Path(tmp) / "b.jsonl")
            self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_emitted_log_is_ingestible(self):
        runs = generate_synthetic_runs(OracleParams(), SMALL_DESIGN, seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            parsed = parse_runs(write_runs(runs, Path(tmp) / "runs.jsonl"))
        self.assertEqual(len(parsed), len(runs))
        self.assertEqual(parsed.malformed, [])
        self.assertEqual([run.final_loss for run in parsed], [run.final_loss for run in runs])


class SynthCommandTest(SimpleTestCase):
    def test_writes_runs_and_oracle_sidecar(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = io.StringIO()
            call_command("synth", "--output", tmp, "--runs-per-scale", "2", "--seed", "5", stdout=out)
            summary = json.loads(out.getvalue().strip().splitlines()[-1])
            self.assertEqual(summary["data"]["runs"], 17 * 2)
            oracle = OracleParams.from_dict(json.loads((Path(tmp) / "oracle.json").read_text()))
            self.assertEqual(oracle.noise_sigma, 0.005)
