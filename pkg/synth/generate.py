import logging
import math
from dataclasses import dataclass

import numpy as np

from configs.schema import RunConfig
from ingest.records import RunRecord
from utils.exceptions import ArgumentError

from .oracle import curve_loss, oracle_loss

logger = logging.getLogger(__name__)

SEQUENCE_LENGTH = 2048
WARMUP_RATIO = 0.01
MIN_LR_RATIO = 0.1


@dataclass(frozen=True)
class SynthDesign:
    """Which (N, D) scales to sample and how many random configurations per scale.

    D is derived as N * tokens_per_param / 1000 (N in millions, D in billions).
    """

    id_model_sizes: tuple = (130.0, 180.0, 268.0, 340.0, 430.0)
    tokens_per_param: tuple = (10.0, 20.0, 40.0)
    ood_model_sizes: tuple = (520.0, 1073.0)
    ood_tokens_per_param: tuple = (20.0,)
    runs_per_scale: int = 180
    optimizers: tuple = ("adamw", "lion")
    batch_sizes: tuple = (64, 128, 256, 512, 1024, 2048)
    weight_decays: tuple = (0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
    lr_spread: float = 6.0
    curve_points: int = 100

    def scales(self):
        pairs = [(n, n * k / 1000.0) for n in self.id_model_sizes for k in self.tokens_per_param]
        pairs += [(n, n * k / 1000.0) for n in self.ood_model_sizes for k in self.ood_tokens_per_param]
        return pairs


def synthetic_config(N, D, optimizer, peak_lr, batch_size, weight_decay):
    total_steps = max(1, round(D * 1e9 / (batch_size * SEQUENCE_LENGTH)))
    return RunConfig(
        source="synthetic", model_size_N=N, data_size_D=D, total_steps=total_steps, optimizer=optimizer,
        peak_lr=peak_lr, batch_size=batch_size, lr_schedule="linear", min_lr_ratio=MIN_LR_RATIO,
        weight_decay=weight_decay, warmup=WARMUP_RATIO, warmup_is_ratio=True, max_grad_norm=1.0,
        beta1=0.9, beta2=0.95, epsilon=1e-8,
    )


def synthetic_curve(params, config, final_loss, points=100):
    steps = np.unique(np.round(np.linspace(0.0, 1.0, points + 1)[1:] * config.total_steps).astype(np.int64))
    steps = steps[steps > 0]
    losses = curve_loss(params, final_loss, steps / config.total_steps, config.warmup_ratio)
    return tuple((int(step), float(loss)) for step, loss in zip(steps, losses))


def generate_synthetic_runs(params, design=None, seed=0):
    """Sample random configurations at every design scale and record their oracle losses and curves."""
    design = design or SynthDesign()
    scales = design.scales()
    if len(scales) < 3:
        raise ArgumentError("A synthetic design needs at least 3 (N, D) scales", module="synth")
    rng = np.random.default_rng(seed)
    spread = math.log(design.lr_spread)
    runs = []
    for N, D in scales:
        lr_star, _ = params.optimum(N, D)
        for _ in range(design.runs_per_scale):
            optimizer = design.optimizers[rng.integers(len(design.optimizers))]
            peak_lr = float(lr_star * math.exp(rng.uniform(-spread, spread)))
            batch_size = int(design.batch_sizes[rng.integers(len(design.batch_sizes))])
            weight_decay = float(design.weight_decays[rng.integers(len(design.weight_decays))])
            noise = rng.normal(0.0, params.noise_sigma) if params.noise_sigma > 0 else 0.0
            config = synthetic_config(N, D, optimizer, peak_lr, batch_size, weight_decay)
            final_loss = oracle_loss(params, config) + noise
            curve = synthetic_curve(params, config, final_loss, design.curve_points)
            runs.append(RunRecord(config=config, final_loss=curve[-1][1], run_id=f"synth-{len(runs):05d}",
                                  curve=curve))
    logger.info(f"Generated {len(runs)} synthetic runs over {len(scales)} scales")
    return runs
