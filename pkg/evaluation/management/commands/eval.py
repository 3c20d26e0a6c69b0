import csv
import json
from pathlib import Path

from utils.commands import PipelineCommand
from utils.exceptions import ArgumentError, FormatError

from evaluation.contour import export_contour_data, write_contour
from evaluation.metrics import align_losses, compute_metrics, read_losses
from evaluation.predictors import ChinchillaPredictor, load_predictor
from evaluation.report import method_report, write_report
from ingest.splits import load_dataset
from lawfit.baselines import BaselineSet

METRICS_FILE = "metrics.json"
REPORT_FILE = "report.tsv"
CONTOUR_FILE = "contour.tsv"


def read_surface(path):
    """(lr, batch_size, loss) triples from a sweep surface table."""
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle, delimiter="\t")
        if reader.fieldnames is None or not {"peak_lr", "batch_size", "predicted_loss"} <= set(reader.fieldnames):
            raise FormatError(f"{path} is not a sweep surface table", module="eval")
        return [(float(row["peak_lr"]), float(row["batch_size"]), float(row["predicted_loss"])) for row in reader]


class Command(PipelineCommand):
    help = ("Score predictions: --pred/--truth files, a method comparison over ID/OOD splits, "
            "and/or contour export of a sweep surface.")
    module = "eval"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--pred", help="Predicted losses (run_id, loss TSV).")
        parser.add_argument("--truth", help="True losses (run_id, loss TSV, or a run log .jsonl).")
        parser.add_argument("--input", help="Ingested runs for the method comparison.")
        parser.add_argument("--splits", help="Directory holding train/id_val/ood_val manifests.")
        parser.add_argument("--dataset", default="synthetic", help="Dataset label in the report.")
        parser.add_argument("--baselines", help="Per-source baselines file (chinchilla row).")
        parser.add_argument("--per-optimizer-baselines", help="Per-optimizer baselines file.")
        parser.add_argument("--regressor", help="Final-loss regressor checkpoint.")
        parser.add_argument("--gbt", help="Boosted forest file.")
        parser.add_argument("--contour", metavar="SURFACE", help="Sweep surface table to export as a contour grid.")

    def config_overrides(self, options):
        return {"paths.input": options.get("input")}

    def run(self, options, config):
        output = self.output_dir(options, config)
        data = {}
        if options.get("pred") or options.get("truth"):
            if not (options.get("pred") and options.get("truth")):
                raise ArgumentError("--pred and --truth must be given together", module="eval")
            pred, truth = align_losses(read_losses(options["pred"]), read_losses(options["truth"]))
            metrics = compute_metrics(pred, truth).to_dict()
            (output / METRICS_FILE).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
            data["metrics"] = metrics

        predictors = {}
        if options.get("baselines"):
            predictors["chinchilla"] = ChinchillaPredictor(BaselineSet.load(options["baselines"]))
        if options.get("per_optimizer_baselines"):
            predictors["chinchilla_per_optimizer"] = ChinchillaPredictor(
                BaselineSet.load(options["per_optimizer_baselines"]))
        if options.get("gbt"):
            predictors["gbt"] = load_predictor(options["gbt"])
        if options.get("regressor"):
            predictors["regressor"] = load_predictor(options["regressor"])
        if predictors:
            if not options.get("splits"):
                raise ArgumentError("The method comparison needs --splits", module="eval")
            dataset = load_dataset(config["paths"]["input"], options["splits"], config["ingest"]["smoothing_coeff"])
            rows = method_report(options["dataset"], dataset, predictors)
            write_report(rows, output / REPORT_FILE)
            data["report"] = rows

        if options.get("contour"):
            section = config["contour"]
            grid = export_contour_data(read_surface(options["contour"]), resolution=section["resolution"],
                                       kernel=section["kernel"], smoothing_sigma=section["smoothing_sigma"])
            data["contour"] = str(write_contour(grid, output / CONTOUR_FILE))

        if not data:
            raise ArgumentError("Nothing to evaluate: pass --pred/--truth, predictors with --splits, or --contour",
                                module="eval")
        return "Evaluation completed.", data
