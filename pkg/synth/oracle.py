"""
Synthetic ground truth.

The oracle loss is the Chinchilla law plus a quadratic penalty in
(log lr, log batch) around the power-law optimum, an optimizer offset and a
weight-decay penalty centred on the optimizer's preferred value. Every
downstream module can be checked against it exactly.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from lawfit.chinchilla import ChinchillaFit, predict_chinchilla
from lawfit.powerlaw import PowerLawFit
from utils.exceptions import ArgumentError


@dataclass(frozen=True)
class OptimizerEffect:
    offset: float = 0.0
    wd_center: float = 0.1
    wd_curvature: float = 0.0


@dataclass(frozen=True)
class CurveShape:
    """Warmup bump amplitude, decay exponent and loss gap at the start of training."""

    bump: float = 0.05
    exponent: float = 2.0
    initial_gap: float = 1.0


def default_optimizer_effects():
    return {
        "adamw": OptimizerEffect(offset=0.0, wd_center=0.1, wd_curvature=0.2),
        "lion": OptimizerEffect(offset=0.01, wd_center=0.6, wd_curvature=0.2),
        "muon": OptimizerEffect(offset=-0.02, wd_center=0.1, wd_curvature=0.2),
    }


@dataclass(frozen=True)
class OracleParams:
    chinchilla: ChinchillaFit = ChinchillaFit(E=1.7, A=5.0, B=1.0, alpha=0.34, beta=0.28, scope=("synthetic", None))
    laws: PowerLawFit = PowerLawFit(c=3e-3, alpha_lr=-0.25, beta_lr=0.1, d=100.0, gamma_bs=0.5)
    curvature: tuple = ((0.04, 0.01), (0.01, 0.02))
    optimizer_effects: dict = field(default_factory=default_optimizer_effects)
    noise_sigma: float = 0.005
    curve_shape: CurveShape = CurveShape()

    def __post_init__(self):
        matrix = np.asarray(self.curvature, dtype=np.float64)
        if matrix.shape != (2, 2) or not np.allclose(matrix, matrix.T):
            raise ArgumentError("Oracle curvature must be a symmetric 2x2 matrix", module="synth")
        if np.any(np.linalg.eigvalsh(matrix) <= 0):
            raise ArgumentError("Oracle curvature must be positive definite", module="synth")
        if self.noise_sigma < 0:
            raise ArgumentError("noise_sigma must be non-negative", module="synth")

    def optimum(self, N, D):
        """Analytic (lr*, batch*) at (N, D)."""
        return self.laws.optimal_lr(N, D), self.laws.optimal_batch_size(D)

    def effect(self, optimizer):
        return self.optimizer_effects.get(optimizer, OptimizerEffect())

    def to_dict(self):
        return {
            "chinchilla": self.chinchilla.params(),
            "laws": self.laws.to_dict()["params"],
            "curvature": [list(row) for row in self.curvature],
            "optimizer_effects": {name: asdict(effect) for name, effect in sorted(self.optimizer_effects.items())},
            "noise_sigma": self.noise_sigma,
            "curve_shape": asdict(self.curve_shape),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            chinchilla=ChinchillaFit(**payload["chinchilla"], scope=("synthetic", None)),
            laws=PowerLawFit(**payload["laws"]),
            curvature=tuple(tuple(row) for row in payload["curvature"]),
            optimizer_effects={name: OptimizerEffect(**effect) for name, effect in payload["optimizer_effects"].items()},
            noise_sigma=payload["noise_sigma"],
            curve_shape=CurveShape(**payload["curve_shape"]),
        )


def oracle_loss(params, config):
    """Noise-free final loss of ``config`` under ``params``."""
    N, D = config.model_size_N, config.data_size_D
    lr_star, batch_star = params.optimum(N, D)
    offset = np.array([math.log(config.peak_lr / lr_star), math.log(config.batch_size / batch_star)])
    penalty = float(offset @ np.asarray(params.curvature) @ offset)
    effect = params.effect(config.optimizer)
    weight_decay = config.weight_decay if config.weight_decay is not None else 0.0
    wd_penalty = effect.wd_curvature * (weight_decay - effect.wd_center) ** 2
    return predict_chinchilla(params.chinchilla, N, D) + penalty + effect.offset + wd_penalty


def curve_loss(params, final_loss, frac, warmup_ratio=0.01):
    """Loss at ``frac`` of training for a run ending at ``final_loss``.

    Decays as ``(1 - frac) ** exponent`` from ``initial_gap`` above the final
    loss, plus a bump that peaks at the end of warmup and vanishes at frac 1.
    """
    shape = params.curve_shape
    frac = np.asarray(frac, dtype=np.float64)
    remaining = 1.0 - frac
    scaled = frac / max(warmup_ratio, 1e-6)
    bump = shape.bump * scaled * np.exp(1.0 - scaled) * remaining
    return final_loss + shape.initial_gap * remaining**shape.exponent + bump


class OraclePredictor:
    """The noise-free oracle behind the predictor interface, for scoring picks against ground truth."""

    def __init__(self, params):
        self.params = params

    def predict_losses(self, configs):
        return np.array([oracle_loss(self.params, config) for config in configs], dtype=np.float64)

    def predict_final_loss(self, config):
        return oracle_loss(self.params, config)
