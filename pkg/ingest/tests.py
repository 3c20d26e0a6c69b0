import io
import json
import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase

from configs.schema import group_key
from synth.generate import SynthDesign, generate_synthetic_runs
from synth.oracle import OracleParams
from utils.exceptions import ArgumentError, FormatError, SplitError
from utils.testing import log_line, make_run, write_log

from .filters import RULE_DIVERGED, RULE_GAP, RULE_UNFINISHED, RULE_UNSTABLE, filter_runs, max_window_slope
from .records import parse_runs, smooth_curve
from .splits import load_splits, read_manifest, split_dataset, write_manifests

DECREASING = [(step, 3.5 - 0.0001 * step) for step in range(100, 2100, 100)]


def grid_runs(sizes=(130.0, 180.0, 268.0, 340.0, 430.0), data_sizes=(10.0, 20.0), per_group=2):
    runs = []
    for n in sizes:
        for d in data_sizes:
            for k in range(per_group):
                runs.append(make_run(f"run-{n:g}-{d:g}-{k}", 3.0 + 0.01 * k, model_size_N=n, data_size_D=d))
    return runs


class SmoothCurveTest(SimpleTestCase):
    def test_constant_curve_is_fixed_point(self):
        np.testing.assert_allclose(smooth_curve([2.5, 2.5, 2.5]), [2.5, 2.5, 2.5])

    def test_recurrence_by_hand(self):
        np.testing.assert_allclose(smooth_curve([1.0, 0.0], 0.99), [1.0, 0.99], rtol=1e-12)

    def test_zero_coefficient_is_identity(self):
        values = [3.0, 2.0, 2.5, 1.0]
        np.testing.assert_allclose(smooth_curve(values, 0.0), values)

    def test_empty_curve_rejected(self):
        with self.assertRaises(ArgumentError):
            smooth_curve([])

    def test_coefficient_out_of_range_rejected(self):
        with self.assertRaises(ArgumentError):
            smooth_curve([1.0], 1.0)

    def test_smoothing_is_bounded(self):
        values = np.random.default_rng(3).uniform(2.0, 4.0, size=200)
        smoothed = smooth_curve(values, 0.9)
        self.assertTrue(np.all(smoothed >= values.min() - 1e-12))
        self.assertTrue(np.all(smoothed <= values.max() + 1e-12))

    def test_pairs_keep_steps(self):
        smoothed = smooth_curve([(10, 1.0), (20, 0.0)], 0.99)
        np.testing.assert_allclose(smoothed[:, 0], [10, 20])
        self.assertAlmostEqual(smoothed[1, 1], 0.99)


class ParseRunsTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "runs.jsonl"

    def test_empty_file(self):
        write_log(self.path, [])
        self.assertEqual(list(parse_runs(self.path)), [])

    def test_one_line(self):
        write_log(self.path, [log_line("a", final_loss=3.1)])
        runs = parse_runs(self.path)
        self.assertEqual(len(runs), 1)
        self.assertEqual(runs[0].run_id, "a")
        self.assertEqual(runs[0].final_loss, 3.1)
        self.assertEqual(runs[0].config.batch_size, 960)

    def test_final_loss_from_smoothed_curve_tail(self):
        curve = [(100, 3.5), (200, 3.2), (300, 3.0)]
        write_log(self.path, [log_line("a", curve=curve)])
        expected = curve[0][1]
        for _, loss in curve[1:]:
            expected = 0.99 * expected + 0.01 * loss
        run = parse_runs(self.path)[0]
        self.assertAlmostEqual(run.final_loss, expected, places=12)
        self.assertEqual(run.steps.tolist(), [100, 200, 300])

    def test_malformed_lines_collected_with_numbers(self):
        write_log(self.path, [log_line("a", final_loss=3.0), "{not json", log_line("b", final_loss=3.2)])
        runs = parse_runs(self.path)
        self.assertEqual([run.run_id for run in runs], ["a", "b"])
        self.assertEqual([number for number, _ in runs.malformed], [2])

    def test_invalid_record_reports_field(self):
        payload = json.loads(log_line("a", final_loss=3.0))
        payload["optimizer"] = "adagrad"
        write_log(self.path, [json.dumps(payload), log_line("b", final_loss=3.0), log_line("c", final_loss=3.0)])
        runs = parse_runs(self.path)
        self.assertIn("optimizer", runs.malformed[0][1])

    def test_decreasing_steps_rejected(self):
        write_log(self.path, [log_line("a", curve=[(200, 3.0), (100, 2.9)]), log_line("b", final_loss=3.0),
                              log_line("c", final_loss=3.0)])
        runs = parse_runs(self.path)
        self.assertIn("curve", runs.malformed[0][1])

    def test_mostly_malformed_file_is_format_error(self):
        write_log(self.path, [log_line("a", final_loss=3.0), "[]", "{}"])
        with self.assertRaises(FormatError):
            parse_runs(self.path)

    def test_missing_file_is_io_error(self):
        with self.assertRaises(OSError):
            parse_runs(Path(self.tmp.name) / "absent.jsonl")

    def test_unknown_format(self):
        write_log(self.path, [])
        with self.assertRaises(FormatError):
            parse_runs(self.path, format="csv")


class FilterRunsTest(SimpleTestCase):
    def test_divergence_threshold(self):
        result = filter_runs([make_run("a", 4.2)])
        self.assertEqual(result.rejected[0][1], RULE_DIVERGED)

    def test_gap_to_best_at_same_size(self):
        result = filter_runs([make_run("a", 3.0), make_run("b", 3.4)])
        self.assertEqual([run.run_id for run in result.kept], ["a"])
        self.assertEqual(result.rejected[0][0].run_id, "b")
        self.assertEqual(result.rejected[0][1], RULE_GAP)

    def test_gap_ignores_other_sizes(self):
        result = filter_runs([make_run("a", 3.0), make_run("b", 3.4, model_size_N=130.0)])
        self.assertEqual(len(result.kept), 2)

    def test_decreasing_finished_run_kept(self):
        result = filter_runs([make_run("a", 3.0, curve=DECREASING)])
        self.assertEqual(len(result.kept), 1)
        self.assertEqual(result.rejected, [])

    def test_unfinished_rejected(self):
        result = filter_runs([make_run("a", 3.0, finished=False)])
        self.assertEqual(result.rejected[0][1], RULE_UNFINISHED)

    def test_rising_window_is_unstable(self):
        curve = DECREASING[:15] + [(step, 3.0 + 0.002 * (step - 1500)) for step in range(1600, 2100, 100)]
        result = filter_runs([make_run("a", 3.2, curve=curve)])
        self.assertEqual(result.rejected[0][1], RULE_UNSTABLE)

    def test_window_slope(self):
        steps = [0, 10, 20, 30]
        self.assertAlmostEqual(max_window_slope(steps, [3.0, 2.9, 3.0, 2.8]), 0.01)
        self.assertIsNone(max_window_slope([0], [3.0]))

    def test_partition(self):
        runs = grid_runs() + [make_run("diverged", 5.0), make_run("unfinished", 3.0, finished=False)]
        result = filter_runs(runs)
        ids = [run.run_id for run in result.kept] + [run.run_id for run, _ in result.rejected]
        self.assertEqual(sorted(ids), sorted(run.run_id for run in runs))
        self.assertEqual(len(ids), len(set(ids)))

    def test_lower_divergence_threshold_never_keeps_more(self):
        runs = [make_run(f"r{k}", 3.0 + 0.1 * k, model_size_N=100.0 + k) for k in range(12)]
        kept_at_4 = {run.run_id for run in filter_runs(runs).kept}
        kept_at_35 = {run.run_id for run in filter_runs(runs, divergence_threshold=3.5).kept}
        self.assertLessEqual(kept_at_35, kept_at_4)
        self.assertLess(len(kept_at_35), len(kept_at_4))


class SplitDatasetTest(SimpleTestCase):
    def test_large_models_go_out_of_distribution(self):
        runs = grid_runs() + [make_run("big", 2.9, model_size_N=520.0)]
        splits = split_dataset(runs, seed=1)
        self.assertEqual([run.run_id for run in splits.ood_val], ["big"])
        self.assertNotIn("big", [run.run_id for run in splits.train + splits.id_val])

    def test_groups_are_atomic(self):
        splits = split_dataset(grid_runs(per_group=3), seed=5)
        train_groups = {(run.config.model_size_N, run.config.data_size_D) for run in splits.train}
        val_groups = {(run.config.model_size_N, run.config.data_size_D) for run in splits.id_val}
        self.assertEqual(train_groups & val_groups, set())

    def test_ratio_applies_to_groups(self):
        splits = split_dataset(grid_runs(), ratio=0.8, seed=0)
        self.assertEqual(len(splits.train), 16)
        self.assertEqual(len(splits.id_val), 4)

    def test_seeded_split_is_deterministic(self):
        first = split_dataset(grid_runs(), seed=7)
        second = split_dataset(grid_runs(), seed=7)
        self.assertEqual([run.run_id for run in first.train], [run.run_id for run in second.train])

    def test_single_group_cannot_split(self):
        with self.assertRaises(SplitError):
            split_dataset([make_run("a", 3.0), make_run("b", 3.1)])

    def test_two_groups_split_one_each(self):
        splits = split_dataset([make_run("a", 3.0), make_run("b", 3.1, data_size_D=50.0)], ratio=0.99)
        self.assertEqual((len(splits.train), len(splits.id_val)), (1, 1))

    def test_manifests_round_trip(self):
        runs = grid_runs() + [make_run("big", 2.9, model_size_N=520.0)]
        splits = split_dataset(runs, seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            write_manifests(splits, tmp, {RULE_GAP: 3})
            provenance, run_ids = read_manifest(Path(tmp) / "ood_val.txt")
            self.assertEqual(run_ids, ["big"])
            self.assertEqual(provenance["seed"], "2")
            self.assertEqual(provenance[f"rejected.{RULE_GAP}"], "3")
            loaded = load_splits(runs, tmp)
        self.assertEqual(loaded.sizes(), splits.sizes())
        self.assertEqual(loaded.seed, 2)




def perturbed_runs(seed):
    """Synthetic runs at random sizes with diverged, gapped, unstable and unfinished runs mixed in."""
    rng = np.random.default_rng(seed)
    design = SynthDesign(runs_per_scale=int(rng.integers(3, 8)))
    runs = generate_synthetic_runs(OracleParams(noise_sigma=0.01), design, seed=seed)
    injected = {}
    for index in rng.choice(len(runs), size=len(runs) // 5, replace=False):
        run = runs[index]
        kind = ("diverged", "gapped", "unstable", "unfinished")[int(rng.integers(4))]
        if kind == "diverged":
            run = replace(run, final_loss=4.0 + float(rng.uniform(0.01, 2.0)))
        elif kind == "gapped":
            run = replace(run, final_loss=run.final_loss + float(rng.uniform(0.35, 0.45)))
        elif kind == "unstable":
            steps, losses = run.steps, run.losses.copy()
            start, peak, end = (int(len(steps) * frac) for frac in (0.4, 0.5, 0.6))
            losses[start:peak + 1] = losses[start] + 0.005 * (steps[start:peak + 1] - steps[start])
            losses[peak:end + 1] = np.linspace(losses[peak], losses[end], end - peak + 1)
            run = replace(run, curve=tuple(zip(steps.tolist(), losses.tolist())))
        else:
            run = replace(run, finished=False)
        runs[index] = run
        injected[run.run_id] = kind
    return runs, injected


def rules_fired(run, best):
    fired = []
    if not run.finished:
        fired.append(RULE_UNFINISHED)
    if run.final_loss > 4.0:
        fired.append(RULE_DIVERGED)
    if run.finished and run.final_loss > best[run.config.model_size_N, run.config.data_size_D] + 0.3:
        fired.append(RULE_GAP)
    slope = max_window_slope(run.steps, run.losses, 0.05)
    if slope is not None and slope > 0.001:
        fired.append(RULE_UNSTABLE)
    return fired


class RandomizedFilterSplitTest(SimpleTestCase):
    """Filter and split invariants over seeded random run sets."""

    SEEDS = range(6)

    def test_filter_invariants(self):
        gap_rejections = 0
        for seed in self.SEEDS:
            with self.subTest(seed=seed):
                runs, injected = perturbed_runs(seed)
                best = {}
                for run in runs:
                    if run.finished:
                        key = (run.config.model_size_N, run.config.data_size_D)
                        best[key] = min(best.get(key, math.inf), run.final_loss)
                result = filter_runs(runs)

                ids = [run.run_id for run in result.kept] + [run.run_id for run, _ in result.rejected]
                self.assertEqual(sorted(ids), sorted(run.run_id for run in runs))
                for run in result.kept:
                    self.assertEqual(rules_fired(run, best), [], run.run_id)
                for run, reason in result.rejected:
                    fired = rules_fired(run, best)
                    self.assertTrue(fired, run.run_id)
                    self.assertEqual(reason, fired[0], run.run_id)
                rejected_ids = {run.run_id for run, _ in result.rejected}
                self.assertLessEqual({run_id for run_id, kind in injected.items() if kind != "gapped"}, rejected_ids)
                gap_rejections += sum(reason == RULE_GAP for _, reason in result.rejected)
        self.assertGreater(gap_rejections, 0)

    def test_split_invariants(self):
        for seed in self.SEEDS:
            with self.subTest(seed=seed):
                runs, _ = perturbed_runs(seed)
                kept = filter_runs(runs).kept
                threshold = float(np.random.default_rng(seed).choice([200.0, 300.0, 430.0]))
                splits = split_dataset(kept, ood_threshold_N=threshold, ratio=0.8, seed=seed)

                self.assertEqual(sum(splits.sizes().values()), len(kept))
                train_groups = {group_key(run.config) for run in splits.train}
                val_groups = {group_key(run.config) for run in splits.id_val}
                self.assertEqual(train_groups & val_groups, set())
                self.assertTrue(all(run.config.model_size_N > threshold for run in splits.ood_val))
                self.assertTrue(all(run.config.model_size_N <= threshold for run in splits.train + splits.id_val))


class IngestCommandTest(SimpleTestCase):
    def test_ingest_then_split(self):
        with tempfile.TemporaryDirectory() as tmp:
            lines = []
            for n in (130.0, 180.0, 268.0, 340.0, 430.0, 520.0):
                for d in (10.0, 20.0):
                    lines.append(log_line(f"run-{n:g}-{d:g}", final_loss=3.0, model_size_N=n, data_size_D=d))
            lines.append(log_line("diverged", final_loss=6.0))
            log = write_log(Path(tmp) / "log.jsonl", lines)
            out = io.StringIO()
            call_command("ingest", "--input", str(log), "--output", tmp, stdout=out)
            summary = json.loads(out.getvalue().strip().splitlines()[-1])
            self.assertEqual(summary["data"]["kept"], 12)
            self.assertEqual(summary["data"]["rejected"][RULE_DIVERGED], 1)

            out = io.StringIO()
            call_command("split", "--input", str(Path(tmp) / "runs.jsonl"), "--output", tmp, "--seed", "3",
                         stdout=out)
            summary = json.loads(out.getvalue().strip().splitlines()[-1])
            self.assertEqual(summary["data"]["sizes"], {"train": 8, "id_val": 2, "ood_val": 2})
            provenance, _ = read_manifest(Path(tmp) / "train.txt")
            self.assertEqual(provenance[f"rejected.{RULE_DIVERGED}"], "1")
