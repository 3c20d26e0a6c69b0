"""Factories shared by the app test modules."""

import json
from pathlib import Path

from configs.schema import RunConfig
from ingest.records import RunRecord


def run_config(**overrides):
    values = dict(
        source="steplaw", model_size_N=268.0, data_size_D=25.0, total_steps=127155, optimizer="adamw",
        peak_lr=0.000977, batch_size=960, num_layers=8, num_heads=16, hidden_dim=9552,
        lr_schedule="cosine", min_lr=1e-05, weight_decay=0.1, warmup=2000, max_grad_norm=1.0,
        beta1=0.9, beta2=0.95, epsilon=1e-8,
    )
    values.update(overrides)
    return RunConfig(**values)


def make_run(run_id, final_loss, curve=(), finished=True, **config_overrides):
    return RunRecord(
        config=run_config(**config_overrides), final_loss=final_loss, run_id=run_id,
        finished=finished, curve=tuple(curve),
    )


def log_line(run_id, final_loss=None, curve=None, **config_overrides):
    payload = run_config(**config_overrides).to_dict()
    payload["run_id"] = run_id
    payload["finished"] = True
    if final_loss is not None:
        payload["final_loss"] = final_loss
    if curve is not None:
        payload["curve"] = [list(point) for point in curve]
    return json.dumps(payload)


def write_log(path, lines):
    path = Path(path)
    path.write_text("".join(line + "\n" for line in lines))
    return path
