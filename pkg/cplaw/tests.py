import io
import json
import logging
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

from django.core.management import call_command
from django.test import SimpleTestCase

from .cli import run_subcommand
from .pipeline import deep_merge, resolve_pipeline_config
from utils.custom_logger import setup_logging
from utils.exceptions import ArgumentError


def run_quietly(argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = run_subcommand(argv)
    return code, out.getvalue(), err.getvalue()


class RunSubcommandTest(SimpleTestCase):
    def test_unknown_subcommand(self):
        code, out, _ = run_quietly(["frobnicate"])
        self.assertEqual(code, 2)
        summary = json.loads(out.strip().splitlines()[-1])
        self.assertEqual(summary["exit_code"], 2)
        self.assertIn("frobnicate", summary["message"])

    def test_missing_subcommand(self):
        self.assertEqual(run_quietly([])[0], 2)

    def test_success(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, out, _ = run_quietly(["schema", "dump", "--output", tmp])
            self.assertEqual(code, 0)
            self.assertTrue(json.loads(out.strip().splitlines()[-1])["success"])
            self.assertTrue((Path(tmp) / "resolved_config.json").exists())

    def test_pipeline_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, out, err = run_quietly(["eval", "--output", tmp])
            self.assertEqual(code, 1)
            self.assertIn("[eval]", err)
            self.assertFalse(json.loads(out.strip().splitlines()[-1])["success"])

    def test_log_dir(self):
        with tempfile.TemporaryDirectory() as tmp:
            try:
                code, _, _ = run_quietly(["schema", "dump", "--output", tmp, "--log-dir", str(Path(tmp) / "logs")])
                self.assertEqual(code, 0)
                self.assertIn("| INFO |", (Path(tmp) / "logs" / "cplaw.log").read_text())
            finally:
                for handler in logging.getLogger().handlers:
                    handler.close()
                setup_logging()

    def test_usage_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(run_quietly(["sweep", "--output", tmp])[0], 2)


class PipelineConfigTest(SimpleTestCase):
    def test_deep_merge_keeps_siblings(self):
        merged = deep_merge({"train": {"seed": 0, "curve_points": 30}}, {"train": {"seed": 3}})
        self.assertEqual(merged, {"train": {"seed": 3, "curve_points": 30}})

    def test_flag_overrides_win(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "override.json"
            path.write_text(json.dumps({"train": {"seed": 5}, "gbt": {"rounds": 7}}))
            config = resolve_pipeline_config(path, {"train.seed": 9, "paths.input": None})
        self.assertEqual(config["train"]["seed"], 9)
        self.assertEqual(config["gbt"]["rounds"], 7)
        self.assertEqual(config["gbt"]["max_depth"], 6)

    def test_invalid_values_rejected(self):
        with self.assertRaises(ArgumentError):
            resolve_pipeline_config(None, {"ingest.smoothing_coeff": 1.0})
        with self.assertRaises(ArgumentError):
            resolve_pipeline_config(None, {"split.ratio": 1.5})


class PipelineEndToEndTest(SimpleTestCase):
    """synth, ingest, split, fit, train and eval chained through their output files."""

    def test_synthetic_pipeline(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            config_path = root / "small.json"
            config_path.write_text(json.dumps({"train": {
                "architecture": {"embed_dim": 4, "encoder_hidden": 4, "trunk_layers": 2, "trunk_width": 8},
                "final": {"stage1": {"epochs": 1, "peak_lr": 1e-3, "warmup_ratio": 0.1},
                          "stage2": {"epochs": 1, "peak_lr": 5e-4, "warmup_steps": 10}},
            }, "gbt": {"rounds": 5}}))

            def step(name, *args):
                out = io.StringIO()
                call_command(name, *args, "--output", str(root / name), "--config", str(config_path), stdout=out)
                summary = json.loads(out.getvalue().strip().splitlines()[-1])
                self.assertTrue(summary["success"], name)
                return summary

            step("synth", "--runs-per-scale", "3")
            step("ingest", "--input", str(root / "synth" / "runs.jsonl"))
            runs = str(root / "ingest" / "runs.jsonl")
            step("split", "--input", runs)
            splits = str(root / "split")
            step("fit", "--input", runs, "--splits", splits)
            baselines = str(root / "fit" / "baselines.json")
            step("train", "--input", runs, "--splits", splits, "--baselines", baselines)
            step("train", "--input", runs, "--splits", splits, "--baselines", baselines, "--model", "gbt")
            step("eval", "--input", runs, "--splits", splits, "--baselines", baselines,
                 "--regressor", str(root / "train" / "regressor_final.json"),
                 "--gbt", str(root / "train" / "gbt_forest.json"))

            lines = (root / "eval" / "report.tsv").read_text().splitlines()
            methods = {tuple(line.split("\t")[1:3]) for line in lines[1:]}
            self.assertEqual(methods, {(split, method) for split in ("id_val", "ood_val")
                                       for method in ("chinchilla", "gbt", "regressor")})
