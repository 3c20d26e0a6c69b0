import csv
from pathlib import Path

import numpy as np

from utils.commands import PipelineCommand
from utils.exceptions import ArgumentError

from configs.serializers import read_config_lines
from regressor.checkpoint import load_checkpoint
from regressor.management.commands.train import checkpoint_file_name
from regressor.predictor import CURVE

CURVES_FILE = "curves.tsv"


def parse_fracs(raw):
    try:
        return [float(item) for item in raw.split(",") if item.strip()]
    except ValueError:
        raise ArgumentError(f"--fracs expects comma-separated numbers, got {raw!r}", module="regressor") from None


class Command(PipelineCommand):
    help = "Predict loss curves with a curve-point regressor."
    module = "regressor"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--input", help="JSONL of run configs (run records are accepted too).")
        parser.add_argument("--checkpoint", help=f"Curve checkpoint (default: <output>/{checkpoint_file_name(CURVE)}).")
        parser.add_argument("--points", type=int, default=30, help="Uniformly spaced query points in (0, 1].")
        parser.add_argument("--fracs", help="Explicit comma-separated fracs; overrides --points.")

    def config_overrides(self, options):
        return {"paths.input": options.get("input")}

    def run(self, options, config):
        output = self.output_dir(options, config)
        checkpoint = Path(options.get("checkpoint") or output / checkpoint_file_name(CURVE))
        predictor = load_checkpoint(checkpoint)
        if options.get("fracs"):
            fracs = parse_fracs(options["fracs"])
        else:
            if options["points"] < 1:
                raise ArgumentError("--points must be at least 1", module="regressor")
            fracs = list(np.linspace(1.0 / options["points"], 1.0, options["points"]))
        rows = read_config_lines(config["paths"]["input"])
        path = output / CURVES_FILE
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
            writer.writerow(["run_id", "frac", "step", "loss"])
            for run_id, run_config in rows:
                for frac, (step, loss) in zip(fracs, predictor.predict_curve(run_config, fracs)):
                    writer.writerow([run_id, repr(float(frac)), step, repr(loss)])
        return "Curves predicted.", {"configs": len(rows), "points": len(fracs), "output": str(path)}
