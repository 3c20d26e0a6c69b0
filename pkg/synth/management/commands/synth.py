import json

from utils.commands import PipelineCommand

from ingest.records import write_runs
from synth.generate import SynthDesign, generate_synthetic_runs
from synth.oracle import OracleParams

RUNS_FILE = "runs.jsonl"
ORACLE_FILE = "oracle.json"


def design_from_config(section):
    return SynthDesign(
        id_model_sizes=tuple(section["id_model_sizes"]),
        tokens_per_param=tuple(section["tokens_per_param"]),
        ood_model_sizes=tuple(section["ood_model_sizes"]),
        runs_per_scale=section["runs_per_scale"],
        optimizers=tuple(section["optimizers"]),
    )


class Command(PipelineCommand):
    help = "Generate a synthetic run log from the oracle loss, plus an oracle.json sidecar."
    module = "synth"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--seed", type=int)
        parser.add_argument("--noise-sigma", type=float, help="Gaussian noise on final losses, in nats.")
        parser.add_argument("--runs-per-scale", type=int)

    def config_overrides(self, options):
        return {
            "synth.seed": options.get("seed"),
            "synth.noise_sigma": options.get("noise_sigma"),
            "synth.runs_per_scale": options.get("runs_per_scale"),
        }

    def run(self, options, config):
        section = config["synth"]
        output = self.output_dir(options, config)
        params = OracleParams(noise_sigma=section["noise_sigma"])
        runs = generate_synthetic_runs(params, design_from_config(section), seed=section["seed"])
        write_runs(runs, output / RUNS_FILE)
        (output / ORACLE_FILE).write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")
        return "Synthetic runs generated.", {"runs": len(runs), "output": str(output / RUNS_FILE)}
