import json
import logging

from utils.commands import PipelineCommand
from utils.exceptions import FitError

from ingest.splits import load_dataset
from lawfit.baselines import BaselineSet
from lawfit.frontier import select_best_per_group
from lawfit.powerlaw import fit_power_law

logger = logging.getLogger(__name__)

BASELINES_FILE = "baselines.json"


def scope_file_name(scope):
    source, optimizer = scope
    return f"chinchilla_{source}.json" if optimizer is None else f"chinchilla_{source}_{optimizer}.json"


class Command(PipelineCommand):
    help = "Fit Chinchilla baselines (one file per scope) and StepLaw-style power laws on the training split."
    module = "lawfit"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--input", help="Ingested runs (runs.jsonl).")
        parser.add_argument("--splits", help="Directory holding train/id_val/ood_val manifests.")
        parser.add_argument("--per-optimizer", action="store_true", default=None,
                            help="Fit one baseline per (source, optimizer).")

    def config_overrides(self, options):
        return {"paths.input": options.get("input"), "fit.per_optimizer": options.get("per_optimizer")}

    def run(self, options, config):
        section = config["fit"]
        output = self.output_dir(options, config)
        dataset = load_dataset(config["paths"]["input"], options.get("splits"), config["ingest"]["smoothing_coeff"])
        baselines = BaselineSet.fit(
            dataset.train,
            per_optimizer=section["per_optimizer"],
            huber_delta=section["huber_delta"],
            exponent_grid=tuple(section["exponent_grid"]),
            top_starts=section["top_starts"],
            max_iter=section["max_iter"],
        )
        baselines.save(output / BASELINES_FILE)
        for scope in baselines.scopes():
            path = output / scope_file_name(scope)
            path.write_text(json.dumps(baselines.fits[scope].to_dict(), indent=2, sort_keys=True) + "\n")

        power_laws = {}
        for source in sorted({run.source for run in dataset.train}):
            frontier = select_best_per_group(dataset.train, (source, None))
            try:
                fit = fit_power_law(frontier)
            except FitError as e:
                logger.warning(f"Power law skipped for source {source}: {e}")
                continue
            (output / f"power_law_{source}.json").write_text(json.dumps(fit.to_dict(), indent=2, sort_keys=True) + "\n")
            power_laws[source] = fit.to_dict()["params"]

        return "Scaling laws fitted.", {
            "baselines": {scope_file_name(scope): baselines.fits[scope].params() for scope in baselines.scopes()},
            "power_laws": power_laws,
            "train_runs": len(dataset.train),
        }
