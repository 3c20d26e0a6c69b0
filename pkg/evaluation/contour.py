import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RBFInterpolator
from scipy.ndimage import gaussian_filter

from utils.exceptions import ArgumentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContourGrid:
    """Regular grid over (log lr, log batch); ``z[i, j]`` sits at ``(log_lr[j], log_batch[i])``."""

    log_lr: np.ndarray
    log_batch: np.ndarray
    raw: np.ndarray
    z: np.ndarray

    def rows(self):
        """(lr, batch_size, loss) triples of the smoothed grid, row-major."""
        for i, log_batch in enumerate(self.log_batch):
            for j, log_lr in enumerate(self.log_lr):
                yield float(np.exp(log_lr)), float(np.exp(log_batch)), float(self.z[i, j])


def _unique_samples(surface):
    samples = {}
    for lr, batch_size, loss in surface:
        if not (lr > 0 and batch_size > 0 and np.isfinite(loss)):
            raise ArgumentError(f"Invalid surface sample {(lr, batch_size, loss)!r}", module="eval")
        key = (float(lr), float(batch_size))
        if key in samples and samples[key] != float(loss):
            raise ArgumentError(f"Conflicting losses {samples[key]!r} and {loss!r} at (lr, batch) = {key}",
                                module="eval")
        samples[key] = float(loss)
    return samples


def surface_interpolant(surface, kernel="thin_plate_spline"):
    """RBF interpolant over (log lr, log batch) with a linear polynomial tail; call it with (lr, batch) pairs."""
    samples = _unique_samples(surface)
    if len(samples) < 4:
        raise ArgumentError(f"Contour export needs at least 4 distinct points, got {len(samples)}", module="eval")
    keys = sorted(samples)
    points = np.log(np.array(keys, dtype=np.float64))
    values = np.array([samples[key] for key in keys])
    try:
        rbf = RBFInterpolator(points, values, kernel=kernel, degree=1)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise ArgumentError(f"Cannot interpolate the surface: {e}", module="eval") from e

    def evaluate(pairs):
        return rbf(np.log(np.asarray(pairs, dtype=np.float64).reshape(-1, 2)))

    return evaluate, points


def export_contour_data(surface, resolution=50, kernel="thin_plate_spline", smoothing_sigma=1.0):
    """Interpolate scattered ``(lr, batch_size, loss)`` samples onto a regular log grid and blur it."""
    if resolution < 2:
        raise ArgumentError(f"Contour resolution must be at least 2, got {resolution}", module="eval")
    evaluate, points = surface_interpolant(surface, kernel)
    log_lr = np.linspace(points[:, 0].min(), points[:, 0].max(), resolution)
    log_batch = np.linspace(points[:, 1].min(), points[:, 1].max(), resolution)
    grid_lr, grid_batch = np.meshgrid(log_lr, log_batch)
    raw = evaluate(np.exp(np.column_stack([grid_lr.ravel(), grid_batch.ravel()]))).reshape(resolution, resolution)
    z = gaussian_filter(raw, sigma=smoothing_sigma, mode="nearest") if smoothing_sigma > 0 else raw.copy()
    logger.info(f"Contour grid {resolution}x{resolution} from {len(points)} samples")
    return ContourGrid(log_lr=log_lr, log_batch=log_batch, raw=raw, z=z)


def write_contour(grid, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["lr", "batch_size", "loss"])
        for lr, batch_size, loss in grid.rows():
            writer.writerow([repr(lr), repr(batch_size), repr(loss)])
    return path
