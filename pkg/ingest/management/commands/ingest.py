import csv

from utils.commands import PipelineCommand

from ingest.filters import filter_runs
from ingest.records import parse_runs, write_runs

KEPT_RUNS_FILE = "runs.jsonl"
REJECTED_FILE = "rejected.tsv"


class Command(PipelineCommand):
    help = "Parse a run log, smooth curves and reject unfinished, diverged and unstable runs."
    module = "ingest"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("--input", help="Run-log file (default: paths.input).")
        parser.add_argument("--format", choices=["jsonl"], help="Run-log format.")

    def config_overrides(self, options):
        return {"paths.input": options.get("input"), "ingest.format": options.get("format")}

    def run(self, options, config):
        section = config["ingest"]
        output = self.output_dir(options, config)
        runs = parse_runs(
            config["paths"]["input"],
            format=section["format"],
            smoothing_coeff=section["smoothing_coeff"],
            max_malformed_fraction=section["max_malformed_fraction"],
        )
        result = filter_runs(
            runs,
            divergence_threshold=section["divergence_threshold"],
            gap_threshold=section["gap_threshold"],
            slope_threshold=section["slope_threshold"],
            window_fraction=section["window_fraction"],
        )
        write_runs(result.kept, output / KEPT_RUNS_FILE)
        with open(output / REJECTED_FILE, "w", newline="") as handle:
            writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
            writer.writerow(["run_id", "rule"])
            for run, reason in result.rejected:
                writer.writerow([run.run_id, reason])
        return "Runs ingested.", {
            "parsed": len(runs),
            "malformed_lines": [number for number, _ in runs.malformed],
            "kept": len(result.kept),
            "rejected": result.rejection_counts(),
            "runs": str(output / KEPT_RUNS_FILE),
        }
