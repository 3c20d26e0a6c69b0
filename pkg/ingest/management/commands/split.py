import csv
from collections import Counter
from pathlib import Path

from utils.commands import PipelineCommand

from ingest.management.commands.ingest import REJECTED_FILE
from ingest.records import parse_runs
from ingest.splits import split_dataset, write_manifests


def read_rejection_counts(path):
    if not path.exists():
        return {}
    with open(path, newline="") as handle:
        return dict(Counter(row["rule"] for row in csv.DictReader(handle, delimiter="\t")))


class Command(PipelineCommand):
    help = "Split ingested runs into train / id_val / ood_val manifests."
    module = "ingest"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--input", help="Ingested runs (runs.jsonl written by 'ingest').")
        parser.add_argument("--seed", type=int)
        parser.add_argument("--ood-threshold", type=float, help="Runs with N above this go to ood_val.")
        parser.add_argument("--split-ratio", type=float, help="Fraction of groups assigned to train.")
        parser.add_argument("--rejected", help="rejected.tsv for the provenance header (default: next to --input).")

    def config_overrides(self, options):
        return {
            "paths.input": options.get("input"),
            "split.seed": options.get("seed"),
            "split.ood_threshold": options.get("ood_threshold"),
            "split.ratio": options.get("split_ratio"),
        }

    def run(self, options, config):
        section = config["split"]
        source = Path(config["paths"]["input"])
        runs = parse_runs(source, smoothing_coeff=config["ingest"]["smoothing_coeff"])
        splits = split_dataset(
            runs, ood_threshold_N=section["ood_threshold"], ratio=section["ratio"], seed=section["seed"]
        )
        rejected = Path(options["rejected"]) if options.get("rejected") else source.parent / REJECTED_FILE
        paths = write_manifests(splits, self.output_dir(options, config), read_rejection_counts(rejected))
        return "Runs split.", {"sizes": splits.sizes(), "manifests": {name: str(path) for name, path in paths.items()}}
