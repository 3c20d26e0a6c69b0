import logging
import math
from dataclasses import dataclass

import numpy as np

from utils.exceptions import ArgumentError, FitError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerLawFit:
    """Optimal learning rate c * N**alpha_lr * D**beta_lr and batch size d * D**gamma_bs."""

    c: float
    alpha_lr: float
    beta_lr: float
    d: float
    gamma_bs: float

    def __post_init__(self):
        if not (self.c > 0 and self.d > 0):
            raise FitError(f"Invalid power-law coefficients c={self.c!r}, d={self.d!r}")

    def optimal_lr(self, N, D):
        return self.c * N**self.alpha_lr * D**self.beta_lr

    def optimal_batch_size(self, D):
        return self.d * D**self.gamma_bs

    def to_dict(self):
        return {"law": "power_law", "params": {"c": self.c, "alpha_lr": self.alpha_lr, "beta_lr": self.beta_lr,
                                               "d": self.d, "gamma_bs": self.gamma_bs}}

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload["params"])


def _least_squares(design, target, label):
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise FitError(f"Rank-deficient design for the {label} power law")
    coefficients, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coefficients


def fit_power_law(frontier):
    """Ordinary least squares on log lr = log c + a log N + b log D and log B = log d + g log D."""
    if len(frontier) < 3:
        raise FitError(f"Power-law fit needs at least 3 frontier points, got {len(frontier)}")
    N = np.array([point.N for point in frontier], dtype=np.float64)
    D = np.array([point.D for point in frontier], dtype=np.float64)
    if len(np.unique(N)) < 2 or len(np.unique(D)) < 2:
        raise FitError("Power-law fit needs at least 2 distinct model sizes and 2 distinct data sizes")
    lr = np.array([point.best_config.peak_lr for point in frontier], dtype=np.float64)
    batch = np.array([point.best_config.batch_size for point in frontier], dtype=np.float64)

    ones = np.ones_like(N)
    log_c, alpha_lr, beta_lr = _least_squares(np.column_stack([ones, np.log(N), np.log(D)]), np.log(lr), "lr")
    log_d, gamma_bs = _least_squares(np.column_stack([ones, np.log(D)]), np.log(batch), "batch size")
    fit = PowerLawFit(c=math.exp(log_c), alpha_lr=float(alpha_lr), beta_lr=float(beta_lr),
                      d=math.exp(log_d), gamma_bs=float(gamma_bs))
    logger.info(f"Fitted power laws on {len(frontier)} frontier points: {fit.to_dict()['params']}")
    return fit


def predict_power_law(fit, N, D):
    """(optimal lr, optimal batch size) at (N, D)."""
    if N <= 0 or D <= 0:
        raise ArgumentError("Model size and data size must be positive", module="lawfit")
    return fit.optimal_lr(N, D), fit.optimal_batch_size(D)
