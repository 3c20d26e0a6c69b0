"""
Chinchilla law L(N, D) = E + A / N**alpha + B / D**beta.

N is in millions of parameters and D in billions of tokens, matching the
run-log units. The fit minimizes a Huber loss on log-space residuals with
the law evaluated as a log-sum-exp of its three terms, starting Nelder-Mead
from the best points of a vectorized multi-start grid.
"""

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from utils.exceptions import ArgumentError, FitError

logger = logging.getLogger(__name__)

DEFAULT_HUBER_DELTA = 1e-3
DEFAULT_EXPONENT_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
E_FRACTIONS = (0.25, 0.5, 0.75, 0.95)
COEFFICIENT_OFFSETS = (-2.0, 0.0, 2.0)
MAX_RESTARTS = 2


@dataclass(frozen=True)
class ChinchillaFit:
    E: float
    A: float
    B: float
    alpha: float
    beta: float
    scope: tuple = (None, None)
    objective: float | None = None
    n_points: int = 0

    def __post_init__(self):
        if not (self.E > 0 and self.A >= 0 and self.B >= 0 and self.alpha > 0 and self.beta > 0):
            raise FitError(f"Invalid Chinchilla parameters {self.params()}")

    def params(self):
        return {"E": self.E, "A": self.A, "B": self.B, "alpha": self.alpha, "beta": self.beta}

    def to_dict(self):
        source, optimizer = self.scope
        return {
            "law": "chinchilla",
            "scope": {"source": source, "optimizer": optimizer},
            "params": self.params(),
            "objective": self.objective,
            "n_points": self.n_points,
            "units": {"N": "millions of parameters", "D": "billions of tokens", "loss": "nats"},
        }

    @classmethod
    def from_dict(cls, payload):
        scope = payload.get("scope") or {}
        return cls(
            **payload["params"],
            scope=(scope.get("source"), scope.get("optimizer")),
            objective=payload.get("objective"),
            n_points=payload.get("n_points", 0),
        )


def predict_chinchilla(fit, N, D):
    """E + A * N**-alpha + B * D**-beta; accepts scalars or arrays."""
    N = np.asarray(N, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if np.any(N <= 0) or np.any(D <= 0):
        raise ArgumentError("Model size and data size must be positive", module="lawfit")
    loss = fit.E + fit.A * N ** (-fit.alpha) + fit.B * D ** (-fit.beta)
    return float(loss) if loss.ndim == 0 else loss


def residual_target(P, fit, N, D):
    """Observed loss minus the baseline prediction at (N, D)."""
    return P - predict_chinchilla(fit, N, D)


def huber(residuals, delta):
    magnitude = np.abs(residuals)
    return np.where(magnitude <= delta, 0.5 * residuals**2, delta * (magnitude - 0.5 * delta))


def log_law(theta, log_n, log_d):
    """log L for parameter rows ``theta = (log E, log A, log B, alpha, beta)``; broadcasts over starts."""
    theta = np.atleast_2d(theta)
    terms = np.stack(
        [
            np.broadcast_to(theta[:, 0:1], (theta.shape[0], log_n.size)),
            theta[:, 1:2] - theta[:, 3:4] * log_n,
            theta[:, 2:3] - theta[:, 4:5] * log_d,
        ]
    )
    return logsumexp(terms, axis=0)


def huber_objective(theta, log_n, log_d, log_loss, delta):
    theta = np.atleast_2d(theta)
    with np.errstate(over="ignore", invalid="ignore"):
        values = huber(log_law(theta, log_n, log_d) - log_loss, delta).sum(axis=1)
    values[(theta[:, 3] <= 0) | (theta[:, 4] <= 0)] = np.inf
    values[~np.isfinite(values)] = np.inf
    return values


def start_grid(log_n, log_d, losses, exponent_grid=DEFAULT_EXPONENT_GRID):
    """Initial (log E, log A, log B, alpha, beta) rows spanning the data range."""
    min_loss = float(losses.min())
    mean_log_n = float(log_n.mean())
    mean_log_d = float(log_d.mean())
    rows = []
    for e_fraction, alpha, beta, k_a, k_b in itertools.product(
        E_FRACTIONS, exponent_grid, exponent_grid, COEFFICIENT_OFFSETS, COEFFICIENT_OFFSETS
    ):
        E = e_fraction * min_loss
        log_gap = math.log(max(min_loss - E, 1e-12) / 2)
        rows.append([math.log(E), log_gap + alpha * mean_log_n + k_a, log_gap + beta * mean_log_d + k_b, alpha, beta])
    return np.array(rows)


def fit_chinchilla(points, scope=(None, None), huber_delta=DEFAULT_HUBER_DELTA,
                   exponent_grid=DEFAULT_EXPONENT_GRID, top_starts=8, max_iter=4000):
    """Fit the Chinchilla law to frontier points; returns the best local optimum over all starts."""
    if len(points) < 5:
        raise FitError(f"Chinchilla fit needs at least 5 frontier points, got {len(points)}")
    N = np.array([point.N for point in points], dtype=np.float64)
    D = np.array([point.D for point in points], dtype=np.float64)
    losses = np.array([point.best_loss for point in points], dtype=np.float64)
    if len(np.unique(N)) < 2 or len(np.unique(D)) < 2:
        raise FitError("Chinchilla fit needs at least 2 distinct model sizes and 2 distinct data sizes")
    if np.any(losses <= 0) or np.any(N <= 0) or np.any(D <= 0):
        raise FitError("Frontier losses and sizes must be positive")
    log_n, log_d, log_loss = np.log(N), np.log(D), np.log(losses)

    starts = start_grid(log_n, log_d, losses, exponent_grid)
    start_values = huber_objective(starts, log_n, log_d, log_loss, huber_delta)
    if not np.any(np.isfinite(start_values)):
        raise FitError("Huber objective is non-finite at every start")

    def objective(theta):
        return float(huber_objective(theta, log_n, log_d, log_loss, huber_delta)[0])

    options = {"maxiter": max_iter, "maxfev": max_iter, "xatol": 1e-8, "fatol": 1e-15}
    best_theta, best_value = None, math.inf
    for index in np.argsort(start_values, kind="stable")[:top_starts]:
        if not np.isfinite(start_values[index]):
            continue
        theta, value = starts[index], start_values[index]
        for _ in range(MAX_RESTARTS):
            result = minimize(objective, theta, method="Nelder-Mead", options=options)
            if not result.fun < value:
                break
            theta, value = result.x, result.fun
        if value < best_value:
            best_theta, best_value = theta, value

    if best_theta is None or not math.isfinite(best_value):
        raise FitError("Chinchilla fit did not reach a finite objective")
    log_e, log_a, log_b, alpha, beta = (float(x) for x in best_theta)
    fit = ChinchillaFit(
        E=math.exp(log_e), A=math.exp(log_a), B=math.exp(log_b), alpha=alpha, beta=beta,
        scope=tuple(scope), objective=float(best_value), n_points=len(points),
    )
    logger.info(f"Fitted Chinchilla law for scope {fit.scope} on {len(points)} points: {fit.params()}")
    return fit
