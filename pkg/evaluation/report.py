import csv
import logging
from pathlib import Path

from utils.exceptions import CPLawError

from .metrics import evaluate_split

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("dataset", "split", "method", "n", "mae", "rmse", "spearman_rho")
REPORT_SPLITS = ("id_val", "ood_val")


def method_report(dataset_name, splits, predictors, split_names=REPORT_SPLITS):
    """
    One row per (split, method) with MAE, RMSE and Spearman rho.

    ``predictors`` maps a method name to anything with ``predict_losses``.
    Empty splits are skipped; a method that cannot score a split (for
    example a baseline with no fit for one of its scopes) is logged and
    skipped.
    """
    rows = []
    for split_name in split_names:
        runs = splits.get(split_name)
        if not runs:
            logger.info(f"Split {split_name} is empty, skipping")
            continue
        for method, predictor in predictors.items():
            try:
                metrics = evaluate_split(predictor, runs)
            except CPLawError as e:
                logger.warning(f"{method} cannot score {split_name}: {e}")
                continue
            rows.append({"dataset": dataset_name, "split": split_name, "method": method, **metrics.to_dict()})
            logger.info(f"{dataset_name}/{split_name}/{method}: mae={metrics.mae:.4g} rmse={metrics.rmse:.4g} "
                        f"rho={metrics.spearman_rho}")
    return rows


def write_report(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(["" if row[column] is None else (repr(row[column]) if isinstance(row[column], float)
                                                             else row[column]) for column in REPORT_COLUMNS])
    return path
