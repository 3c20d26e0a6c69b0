import csv
import json

from utils.commands import PipelineCommand

from configs.schema import SCHEMA_VERSION, schema_hash, schema_table


class Command(PipelineCommand):
    help = "Dump the canonical field order, kinds and scale factors (schema.json + schema.tsv)."
    module = "configs"

    def add_pipeline_arguments(self, parser):
        parser.add_argument("action", choices=["dump"], help="Only 'dump' is supported.")

    def run(self, options, config):
        output = self.output_dir(options, config)
        table = schema_table()
        digest = schema_hash()
        (output / "schema.json").write_text(
            json.dumps({"version": SCHEMA_VERSION, "hash": digest, "fields": table}, indent=2) + "\n"
        )
        with open(output / "schema.tsv", "w", newline="") as handle:
            writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
            writer.writerow(["position", "name", "kind", "scale_factor", "vocabulary_size"])
            for row in table:
                writer.writerow([row["position"], row["name"], row["kind"],
                                 "" if row["scale_factor"] is None else repr(row["scale_factor"]),
                                 len(row["vocabulary"])])
        return "Schema dumped.", {"version": SCHEMA_VERSION, "hash": digest, "fields": len(table),
                                  "output": str(output)}
