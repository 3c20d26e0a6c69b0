import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from ingest.records import parse_runs
from utils.exceptions import ArgumentError, FormatError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    spearman_rho: float | None
    n: int

    def to_dict(self):
        return asdict(self)


def spearman(pred, truth):
    """Pearson correlation of average ranks; ``None`` when either rank vector is constant."""
    pred_ranks = rankdata(pred, method="average")
    truth_ranks = rankdata(truth, method="average")
    pred_centered = pred_ranks - pred_ranks.mean()
    truth_centered = truth_ranks - truth_ranks.mean()
    denominator = math.sqrt(float(np.sum(pred_centered**2)) * float(np.sum(truth_centered**2)))
    if denominator == 0.0:
        return None
    rho = float(np.sum(pred_centered * truth_centered)) / denominator
    return max(-1.0, min(1.0, rho))


def compute_metrics(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ArgumentError(f"Predictions {pred.shape} and truth {truth.shape} must be equal-length vectors",
                            module="eval")
    if len(pred) == 0:
        raise ArgumentError("Cannot score an empty prediction set", module="eval")
    error = pred - truth
    mae = float(np.mean(np.abs(error)))
    rmse = float(np.sqrt(np.mean(error**2)))
    # rmse >= mae must hold exactly, rounding included
    rmse = max(rmse, mae)
    return Metrics(mae=mae, rmse=rmse, spearman_rho=spearman(pred, truth), n=len(pred))


def evaluate_split(predictor, split):
    """Metrics of ``predictor.predict_losses`` against the recorded final losses of ``split``."""
    split = list(split)
    if not split:
        raise ArgumentError("Cannot evaluate an empty split", module="eval")
    pred = predictor.predict_losses([run.config for run in split])
    return compute_metrics(pred, [run.final_loss for run in split])


def write_losses(rows, path):
    """Write ``(run_id, loss)`` rows as a two-column TSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["run_id", "loss"])
        for run_id, loss in rows:
            writer.writerow([run_id, repr(float(loss))])
    return path


def read_losses(path):
    """``{run_id: loss}`` from a loss TSV, or from the final losses of a run log (``.jsonl``)."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return {run.run_id: run.final_loss for run in parse_runs(path)}
    losses = {}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle, delimiter="\t")
        if reader.fieldnames is None or not {"run_id", "loss"} <= set(reader.fieldnames):
            raise FormatError(f"{path} needs 'run_id' and 'loss' columns", module="eval")
        for line_no, row in enumerate(reader, start=2):
            try:
                losses[row["run_id"]] = float(row["loss"])
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{line_no}: loss {row['loss']!r} is not a number", module="eval") from None
    return losses


def align_losses(pred, truth):
    """Pair two ``{run_id: loss}`` maps in sorted run-id order; both must name the same runs."""
    missing = sorted(set(truth) ^ set(pred))
    if missing:
        raise ArgumentError(f"Prediction and truth files disagree on {len(missing)} run ids, e.g. {missing[:3]}",
                            module="eval")
    run_ids = sorted(truth)
    return [pred[run_id] for run_id in run_ids], [truth[run_id] for run_id in run_ids]
