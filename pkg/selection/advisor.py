import logging

import numpy as np

from lawfit.powerlaw import predict_power_law
from utils.exceptions import ArgumentError

from .sweep import retarget

logger = logging.getLogger(__name__)


class PowerLawAdvisor:
    """Recommends (lr, batch) straight from fitted power laws, for comparison with a swept pick."""

    def __init__(self, fit):
        self.fit = fit

    def recommend(self, base_config, N, D):
        lr, batch_size = predict_power_law(self.fit, N, D)
        config = retarget(base_config, N, D).with_values(peak_lr=lr, batch_size=max(1, int(round(batch_size))))
        logger.info(f"Power-law pick at N={N}, D={D}: lr={lr:.4g}, batch={config.batch_size}")
        return config


def loss_profile(predictor, base_config, field, values):
    """Predicted loss of ``base_config`` as ``field`` takes each of ``values``."""
    configs = [base_config.with_values(**{field: value}) for value in values]
    return list(zip(values, (float(loss) for loss in predictor.predict_losses(configs))))


def crossing_point(profile_a, profile_b):
    """
    First value where ``profile_b - profile_a`` changes sign, linearly
    interpolated between the two bracketing grid values.

    Returns ``(value, cell)``, where ``cell`` is the index of the left
    bracketing value, or ``None`` when the profiles never cross.
    """
    values_a = [value for value, _ in profile_a]
    if values_a != [value for value, _ in profile_b]:
        raise ArgumentError("Profiles must be evaluated on the same values", module="selection")
    diff = np.array([loss_b - loss_a for (_, loss_a), (_, loss_b) in zip(profile_a, profile_b)])
    for cell in range(len(diff) - 1):
        left, right = diff[cell], diff[cell + 1]
        if left == 0:
            return float(values_a[cell]), cell
        if left * right < 0:
            t = left / (left - right)
            return float(values_a[cell] + t * (values_a[cell + 1] - values_a[cell])), cell
    if len(diff) and diff[-1] == 0:
        return float(values_a[-1]), len(diff) - 1
    return None
