from pathlib import Path

from utils.commands import PipelineCommand

from configs.serializers import read_config_lines
from evaluation.metrics import write_losses
from evaluation.predictors import load_predictor
from regressor.management.commands.train import checkpoint_file_name
from regressor.predictor import FINAL

PREDICTIONS_FILE = "predictions.tsv"


class Command(PipelineCommand):
    help = "Predict final losses for every config in a JSONL file with a regressor, forest or baselines file."
    module = "regressor"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--input", help="JSONL of run configs (run records are accepted too).")
        parser.add_argument("--checkpoint",
                            help=f"Regressor checkpoint, forest or baselines file "
                                 f"(default: <output>/{checkpoint_file_name(FINAL)}).")

    def config_overrides(self, options):
        return {"paths.input": options.get("input")}

    def run(self, options, config):
        output = self.output_dir(options, config)
        checkpoint = Path(options.get("checkpoint") or output / checkpoint_file_name(FINAL))
        predictor = load_predictor(checkpoint)
        rows = read_config_lines(config["paths"]["input"])
        losses = predictor.predict_losses([run_config for _, run_config in rows])
        path = write_losses(zip((run_id for run_id, _ in rows), losses), output / PREDICTIONS_FILE)
        return "Losses predicted.", {"predictions": len(rows), "checkpoint": str(checkpoint), "output": str(path)}
