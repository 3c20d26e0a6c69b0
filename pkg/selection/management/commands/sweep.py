import csv
import json
from pathlib import Path

from utils.commands import PipelineCommand, parse_fix
from utils.exceptions import ArgumentError

from configs.serializers import parse_config, read_config_lines
from evaluation.predictors import load_predictor
from lawfit.powerlaw import PowerLawFit
from regressor.management.commands.train import checkpoint_file_name
from regressor.predictor import FINAL
from selection.advisor import PowerLawAdvisor
from selection.grid import SweepGrid
from selection.sweep import recommend

SURFACE_FILE = "surface.tsv"
SKIPPED_FILE = "skipped.tsv"
RECOMMENDATION_FILE = "recommendation.json"


def load_base_config(options, config):
    if options.get("base"):
        return parse_config(json.loads(Path(options["base"]).read_text()))
    rows = read_config_lines(config["paths"]["input"])
    if not rows:
        raise ArgumentError("No template config: pass --base or a non-empty --input", module="selection")
    return rows[0][1]


class Command(PipelineCommand):
    help = "Sweep a predictor over an lr x batch grid at a target (N, D) and recommend hyperparameters."
    module = "selection"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--checkpoint",
                            help=f"Predictor file (default: <output>/{checkpoint_file_name(FINAL)}).")
        parser.add_argument("--base", help="JSON file with the template config (default: first config of --input).")
        parser.add_argument("--input", help="JSONL of configs or runs; its first entry is the template.")
        parser.add_argument("--N", type=float, required=True, help="Target model size, millions of parameters.")
        parser.add_argument("--D", type=float, required=True, help="Target data size, billions of tokens.")
        parser.add_argument("--fix", action="append", metavar="FIELD=VALUE",
                            help="Hold a field fixed and drop it from the grid (repeatable).")
        parser.add_argument("--near-frac", type=float, help="Near-optimal band for quadratic refinement.")
        parser.add_argument("--compare-power-law", metavar="PATH",
                            help="power_law_<source>.json whose pick is scored on the same surface.")

    def config_overrides(self, options):
        return {"paths.input": options.get("input"), "sweep.near_frac": options.get("near_frac")}

    def run(self, options, config):
        output = self.output_dir(options, config)
        section = config["sweep"]
        checkpoint = Path(options.get("checkpoint") or output / checkpoint_file_name(FINAL))
        predictor = load_predictor(checkpoint)
        base = load_base_config(options, config)
        constraints = parse_fix(options.get("fix"))
        grid = SweepGrid.from_config(section, base)

        rec = recommend(predictor, options["N"], options["D"], grid, constraints, section["near_frac"])
        write_surface(rec, output / SURFACE_FILE)
        with open(output / SKIPPED_FILE, "w", newline="") as handle:
            writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
            writer.writerow(["grid_index", "values", "error"])
            for index, values, message in rec.skipped:
                writer.writerow([index, json.dumps(values, sort_keys=True), message])

        summary = rec.summary()
        if options.get("compare_power_law"):
            fit = PowerLawFit.from_dict(json.loads(Path(options["compare_power_law"]).read_text()))
            pick = PowerLawAdvisor(fit).recommend(base.with_values(**constraints), options["N"], options["D"])
            pick_loss = float(predictor.predict_losses([pick])[0])
            summary["power_law"] = {"peak_lr": pick.peak_lr, "batch_size": pick.batch_size,
                                    "predicted_loss": pick_loss,
                                    "relative_loss": (pick_loss - rec.best_grid_loss) / rec.best_grid_loss}
        (output / RECOMMENDATION_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return "Sweep completed.", summary


def write_surface(rec, path):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["rank", "grid_index", "peak_lr", "batch_size", "total_steps", "predicted_loss",
                         "relative_loss"])
        for rank, ((run_config, relative), point) in enumerate(zip(rec.relative_losses(), rec.predicted_surface)):
            writer.writerow([rank, point.index, repr(run_config.peak_lr), run_config.batch_size,
                             run_config.total_steps, repr(point.loss), repr(relative)])
    return path
