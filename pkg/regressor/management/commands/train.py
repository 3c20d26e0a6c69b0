import csv
import logging
from pathlib import Path

from utils.commands import PipelineCommand
from utils.exceptions import TrainingError

from gbt.predictor import train_gbt
from gbt.forest import GBTParams
from ingest.splits import load_dataset
from lawfit.baselines import BaselineSet
from lawfit.management.commands.fit import BASELINES_FILE
from regressor.checkpoint import save_checkpoint
from regressor.model import Architecture
from regressor.predictor import CURVE, FINAL
from regressor.training import TrainPlan, train

logger = logging.getLogger(__name__)

GBT_FILE = "gbt_forest.json"
GBT_DUMP_FILE = "gbt_forest.txt"
REPORT_FILE = "training_report.tsv"


def checkpoint_file_name(target_kind):
    return f"regressor_{target_kind}.json"


class Command(PipelineCommand):
    help = "Train the residual regressor (final-loss or curve-point) or the boosted-tree baseline."
    module = "regressor"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--input", help="Ingested runs (runs.jsonl).")
        parser.add_argument("--splits", help="Directory holding train/id_val/ood_val manifests.")
        parser.add_argument("--baselines", help=f"Fitted baselines (default: <output>/{BASELINES_FILE}).")
        parser.add_argument("--model", choices=["regressor", "gbt"], default="regressor")
        parser.add_argument("--target", choices=[FINAL, CURVE], default=FINAL,
                            help="Final-loss or curve-point targets (regressor only).")
        parser.add_argument("--seed", type=int, help="Initialization and shuffling seed.")

    def config_overrides(self, options):
        return {"paths.input": options.get("input"), "train.seed": options.get("seed")}

    def run(self, options, config):
        output = self.output_dir(options, config)
        dataset = load_dataset(config["paths"]["input"], options.get("splits"), config["ingest"]["smoothing_coeff"])
        baselines = BaselineSet.load(options.get("baselines") or output / BASELINES_FILE)
        section = config["train"]

        if options["model"] == "gbt":
            predictor = train_gbt(dataset, GBTParams.from_config(config["gbt"]), baselines,
                                  residual_target=section["residual_target"])
            path = predictor.save(output / GBT_FILE)
            (output / GBT_DUMP_FILE).write_text(predictor.forest.dump())
            return "Boosted trees trained.", {
                "model": "gbt",
                "trees": len(predictor.forest.trees),
                "train_mse": predictor.forest.history[-1],
                "checkpoint": str(path),
            }

        target_kind = options["target"]
        plan = TrainPlan.from_config(section, target_kind)
        try:
            predictor = train(dataset, plan, baselines, Architecture(**section["architecture"]), target_kind)
        except TrainingError as e:
            if e.predictor is not None:
                save_checkpoint(e.predictor, output / checkpoint_file_name(f"{target_kind}_last_finite"))
            raise
        path = save_checkpoint(predictor, output / checkpoint_file_name(target_kind))
        write_report(predictor.report, output / REPORT_FILE)
        return "Regressor trained.", {
            "model": "regressor",
            "target": target_kind,
            "parameters": predictor.model.parameter_count,
            "stage1_train_mse": predictor.report.final_mse(1),
            "stage2_train_mse": predictor.report.final_mse(2),
            "checkpoint": str(path),
        }


def write_report(report, path):
    path = Path(path)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["stage", "epoch", "train_mse", "val_mae"])
        for row in report.epochs:
            writer.writerow([row["stage"], row["epoch"], repr(row["train_mse"]),
                             "" if row["val_mae"] is None else repr(row["val_mae"])])
    return path
