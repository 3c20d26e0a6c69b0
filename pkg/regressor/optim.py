import math
from dataclasses import dataclass, field

import numpy as np

from utils.exceptions import ArgumentError, TrainingError


@dataclass(frozen=True)
class AdamWHyper:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state, hyper):
    """
    One decoupled-weight-decay Adam update of the blocks present in ``grads``.

    Returns new ``(params, state)``; blocks without a gradient are carried
    over untouched. Where the denominator is exactly zero the adaptive term is
    taken as zero.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"Non-finite gradient in parameter block '{name}'")

    step = state.step + 1
    correction1 = 1.0 - hyper.beta1**step
    correction2 = 1.0 - hyper.beta2**step
    new_params, m, v = dict(params), dict(state.m), dict(state.v)
    for name, grad in grads.items():
        m[name] = hyper.beta1 * state.m.get(name, 0.0) + (1.0 - hyper.beta1) * grad
        v[name] = hyper.beta2 * state.v.get(name, 0.0) + (1.0 - hyper.beta2) * grad * grad
        m_hat = m[name] / correction1 if correction1 else m[name]
        v_hat = v[name] / correction2 if correction2 else v[name]
        denominator = np.sqrt(v_hat) + hyper.eps
        adaptive = np.divide(m_hat, denominator, out=np.zeros_like(params[name]), where=denominator != 0)
        new_params[name] = params[name] - hyper.lr * (adaptive + hyper.weight_decay * params[name])
    return new_params, AdamWState(step=step, m=m, v=v)


def warmup_steps_for(total_steps, warmup_ratio=None, warmup_steps=None, cap_fraction=0.1):
    """Warmup length from a ratio of the stage, or a step count capped at ``cap_fraction`` of it."""
    if warmup_ratio is not None:
        return int(round(warmup_ratio * total_steps))
    if warmup_steps is not None:
        return min(int(warmup_steps), int(cap_fraction * total_steps))
    return 0


def lr_at(step, total_steps, warmup_steps, peak_lr):
    """Linear warmup from 0 to ``peak_lr`` over ``warmup_steps``, then linear decay to 0 at ``total_steps``."""
    if not 0 <= warmup_steps <= total_steps:
        raise ArgumentError(f"Warmup {warmup_steps} must lie within the {total_steps} training steps",
                            module="regressor")
    if not 0 <= step <= total_steps:
        raise ArgumentError(f"Step {step} is outside [0, {total_steps}]", module="regressor")
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    if total_steps == warmup_steps:
        return peak_lr
    return peak_lr * (total_steps - step) / (total_steps - warmup_steps)


def steps_per_epoch(examples, batch_size):
    return math.ceil(examples / min(batch_size, examples))
