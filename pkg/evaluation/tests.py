import io
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from ingest.records import write_runs
from ingest.splits import DatasetSplits, split_dataset, write_manifests
from lawfit.baselines import BaselineSet
from lawfit.chinchilla import ChinchillaFit
from synth.generate import SynthDesign, generate_synthetic_runs
from synth.oracle import OracleParams, OraclePredictor
from utils.exceptions import ArgumentError, FormatError
from utils.testing import make_run

from .contour import export_contour_data, surface_interpolant
from .metrics import align_losses, compute_metrics, evaluate_split, read_losses, spearman, write_losses
from .predictors import ChinchillaPredictor, load_predictor
from .report import method_report

NOISELESS = OracleParams(noise_sigma=0.0)


def noiseless_runs(runs_per_scale=4):
    return generate_synthetic_runs(NOISELESS, SynthDesign(runs_per_scale=runs_per_scale), seed=0)


def grid_surface(loss_of):
    return [(lr, batch, loss_of(math.log(lr), math.log(batch)))
            for lr in np.geomspace(1e-4, 1e-2, 7) for batch in (64, 128, 256, 512, 1024)]


class SpearmanTest(SimpleTestCase):
    def test_identical_order(self):
        self.assertEqual(spearman([1.0, 2.0, 3.0], [10.0, 20.0, 30.0]), 1.0)

    def test_reversed_order(self):
        self.assertEqual(spearman([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]), -1.0)

    def test_one_swap(self):
        self.assertAlmostEqual(spearman([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]), 0.5)

    def test_ties_use_average_ranks(self):
        self.assertAlmostEqual(spearman([1.0, 1.0, 2.0], [1.0, 2.0, 3.0]), math.sqrt(3) / 2)

    def test_constant_ranks_undefined(self):
        self.assertIsNone(spearman([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]))
        self.assertIsNone(spearman([1.0], [1.0]))


class ComputeMetricsTest(SimpleTestCase):
    def test_perfect_predictions(self):
        metrics = compute_metrics([3.1, 3.2, 3.0], [3.1, 3.2, 3.0])
        self.assertEqual((metrics.mae, metrics.rmse, metrics.spearman_rho, metrics.n), (0.0, 0.0, 1.0, 3))

    def test_mae_and_rmse(self):
        metrics = compute_metrics([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 8.0])
        self.assertAlmostEqual(metrics.mae, 1.0)
        self.assertAlmostEqual(metrics.rmse, 2.0)

    def test_rmse_never_below_mae(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred, truth = rng.normal(size=7), rng.normal(size=7)
            metrics = compute_metrics(pred, truth)
            self.assertGreaterEqual(metrics.rmse, metrics.mae)

    def test_invalid_inputs(self):
        with self.assertRaises(ArgumentError):
            compute_metrics([], [])
        with self.assertRaises(ArgumentError):
            compute_metrics([1.0, 2.0], [1.0])


class EvaluateSplitTest(SimpleTestCase):
    def test_oracle_is_exact_on_noiseless_runs(self):
        metrics = evaluate_split(OraclePredictor(NOISELESS), noiseless_runs())
        self.assertAlmostEqual(metrics.mae, 0.0, places=12)
        self.assertAlmostEqual(metrics.spearman_rho, 1.0, places=12)

    def test_empty_split(self):
        with self.assertRaises(ArgumentError):
            evaluate_split(OraclePredictor(NOISELESS), [])

    def test_method_report_skips_uncovered_methods(self):
        runs = noiseless_runs()
        dataset = split_dataset(runs, ood_threshold_N=430.0, seed=0)
        steplaw_fit = ChinchillaFit(E=1.7, A=5.0, B=1.0, alpha=0.34, beta=0.28, scope=("steplaw", None))
        steplaw_only = BaselineSet([steplaw_fit])
        predictors = {
            "oracle": OraclePredictor(NOISELESS),
            "chinchilla": ChinchillaPredictor(BaselineSet([NOISELESS.chinchilla])),
            "wrong_scope": ChinchillaPredictor(steplaw_only),
        }
        rows = method_report("synthetic", dataset, predictors)
        self.assertEqual({(row["split"], row["method"]) for row in rows},
                         {(split, method) for split in ("id_val", "ood_val") for method in ("oracle", "chinchilla")})
        by_key = {(row["split"], row["method"]): row for row in rows}
        self.assertLess(by_key["id_val", "oracle"]["mae"], by_key["id_val", "chinchilla"]["mae"])

    def test_method_report_skips_empty_splits(self):
        runs = noiseless_runs()
        dataset = DatasetSplits(train=runs, id_val=runs[:5])
        rows = method_report("synthetic", dataset, {"oracle": OraclePredictor(NOISELESS)})
        self.assertEqual([row["split"] for row in rows], ["id_val"])


class LossFilesTest(SimpleTestCase):
    def test_write_then_read(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_losses([("b", 3.25), ("a", 2.5)], Path(tmp) / "pred.tsv")
            self.assertEqual(read_losses(path), {"a": 2.5, "b": 3.25})

    def test_truth_from_run_log(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_runs([make_run("r1", 3.0), make_run("r2", 3.5, peak_lr=2e-3)], Path(tmp) / "runs.jsonl")
            self.assertEqual(read_losses(path), {"r1": 3.0, "r2": 3.5})

    def test_bad_loss_value(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "pred.tsv"
            path.write_text("run_id\tloss\nr1\tnot-a-number\n")
            with self.assertRaises(FormatError):
                read_losses(path)

    def test_missing_columns(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "pred.tsv"
            path.write_text("id\tvalue\nr1\t1.0\n")
            with self.assertRaises(FormatError):
                read_losses(path)

    def test_alignment(self):
        self.assertEqual(align_losses({"b": 2.0, "a": 1.0}, {"a": 1.5, "b": 2.5}), ([1.0, 2.0], [1.5, 2.5]))
        with self.assertRaises(ArgumentError):
            align_losses({"a": 1.0}, {"b": 1.0})


class ContourTest(SimpleTestCase):
    def test_interpolant_reproduces_samples(self):
        surface = grid_surface(lambda x, y: 3.0 + 0.04 * (x + 7.0) ** 2 + 0.02 * (y - 5.5) ** 2)
        evaluate, _ = surface_interpolant(surface)
        np.testing.assert_allclose(evaluate([(lr, batch) for lr, batch, _ in surface]),
                                   [loss for _, _, loss in surface], atol=1e-8)

    def test_constant_surface(self):
        grid = export_contour_data(grid_surface(lambda x, y: 3.0), resolution=10)
        np.testing.assert_allclose(grid.z, 3.0, atol=1e-9)

    def test_plane_reproduced(self):
        def plane(x, y):
            return 2.0 + 0.1 * x - 0.05 * y

        grid = export_contour_data(grid_surface(plane), resolution=12, smoothing_sigma=0.0)
        expected = plane(*np.meshgrid(grid.log_lr, grid.log_batch))
        np.testing.assert_allclose(grid.raw, expected, atol=1e-6)
        np.testing.assert_allclose(grid.z, grid.raw)

    def test_grid_spans_samples(self):
        grid = export_contour_data(grid_surface(lambda x, y: 3.0 + x * y * 1e-3), resolution=5)
        rows = list(grid.rows())
        self.assertEqual(len(rows), 25)
        self.assertAlmostEqual(rows[0][0], 1e-4)
        self.assertAlmostEqual(rows[-1][1], 1024.0)

    def test_duplicate_samples(self):
        surface = grid_surface(lambda x, y: 3.0)
        surface.append(surface[0])
        export_contour_data(surface, resolution=4)
        surface.append((surface[0][0], surface[0][1], 4.0))
        with self.assertRaises(ArgumentError):
            export_contour_data(surface, resolution=4)

    def test_too_few_points(self):
        with self.assertRaises(ArgumentError):
            export_contour_data([(1e-3, 64, 3.0), (2e-3, 64, 3.1), (1e-3, 128, 3.2)])


class PredictorLoadingTest(SimpleTestCase):
    def test_baselines_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = BaselineSet([NOISELESS.chinchilla]).save(Path(tmp) / "baselines.json")
            self.assertIsInstance(load_predictor(path), ChinchillaPredictor)

    def test_unknown_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "other.json"
            path.write_text(json.dumps({"something": 1}))
            with self.assertRaises(FormatError):
                load_predictor(path)


class EvalCommandTest(SimpleTestCase):
    def summary(self, out):
        return json.loads(out.getvalue().strip().splitlines()[-1])

    def test_identical_predictions(self):
        with tempfile.TemporaryDirectory() as tmp:
            pred = write_losses([("a", 3.0), ("b", 3.4), ("c", 3.2)], Path(tmp) / "pred.tsv")
            out = io.StringIO()
            call_command("eval", "--pred", str(pred), "--truth", str(pred), "--output", tmp, stdout=out)
            metrics = json.loads((Path(tmp) / "metrics.json").read_text())
            self.assertEqual(metrics["mae"], 0.0)
            self.assertEqual(metrics["spearman_rho"], 1.0)
            self.assertTrue(self.summary(out)["success"])

    def test_method_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            runs = noiseless_runs()
            runs_path = write_runs(runs, Path(tmp) / "runs.jsonl")
            write_manifests(split_dataset(runs, seed=0), Path(tmp) / "splits")
            baselines = BaselineSet([NOISELESS.chinchilla]).save(Path(tmp) / "baselines.json")
            call_command("eval", "--input", str(runs_path), "--splits", str(Path(tmp) / "splits"),
                         "--baselines", str(baselines), "--output", tmp, stdout=io.StringIO())
            lines = (Path(tmp) / "report.tsv").read_text().splitlines()
            self.assertEqual(lines[0].split("\t"), ["dataset", "split", "method", "n", "mae", "rmse", "spearman_rho"])
            self.assertEqual([line.split("\t")[1] for line in lines[1:]], ["id_val", "ood_val"])

    def test_contour_export(self):
        with tempfile.TemporaryDirectory() as tmp:
            surface = Path(tmp) / "surface.tsv"
            rows = ["rank\tgrid_index\tpeak_lr\tbatch_size\ttotal_steps\tpredicted_loss\trelative_loss"]
            for rank, (lr, batch, loss) in enumerate(grid_surface(lambda x, y: 3.0 + 0.01 * (x + 7.0) ** 2)):
                rows.append(f"{rank}\t{rank}\t{lr!r}\t{batch}\t1000\t{loss!r}\t0.0")
            surface.write_text("\n".join(rows) + "\n")
            call_command("eval", "--contour", str(surface), "--output", tmp, stdout=io.StringIO())
            contour = (Path(tmp) / "contour.tsv").read_text().splitlines()
            self.assertEqual(contour[0], "lr\tbatch_size\tloss")
            self.assertEqual(len(contour), 50 * 50 + 1)

    def test_nothing_requested(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CommandError) as raised:
                call_command("eval", "--output", tmp, stdout=io.StringIO())
            self.assertEqual(raised.exception.returncode, 1)
            self.assertIn("[eval]", str(raised.exception))
