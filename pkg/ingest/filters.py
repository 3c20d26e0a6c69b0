import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from configs.schema import nd_key

logger = logging.getLogger(__name__)

RULE_UNFINISHED = "rule_i_unfinished"
RULE_DIVERGED = "rule_ii_diverged"
RULE_GAP = "rule_ii_gap"
RULE_UNSTABLE = "rule_iii_unstable"
RULES = (RULE_UNFINISHED, RULE_DIVERGED, RULE_GAP, RULE_UNSTABLE)


@dataclass
class FilterResult:
    kept: list = field(default_factory=list)
    rejected: list = field(default_factory=list)

    def rejection_counts(self):
        counts = Counter(reason for _, reason in self.rejected)
        return {rule: counts.get(rule, 0) for rule in RULES}


def max_window_slope(steps, losses, window_fraction=0.05):
    """Largest Δloss/Δstep over windows of ceil(window_fraction * T) consecutive logged points."""
    count = len(losses)
    if count < 2:
        return None
    window = min(count, max(2, math.ceil(window_fraction * count)))
    steps = np.asarray(steps, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    span = window - 1
    slopes = (losses[span:] - losses[:-span]) / (steps[span:] - steps[:-span])
    return float(slopes.max())


def best_losses_by_nd(runs):
    best = {}
    for run in runs:
        if not run.finished:
            continue
        key = nd_key(run.config)
        best[key] = min(best.get(key, math.inf), run.final_loss)
    return best


def filter_runs(runs, divergence_threshold=4.0, gap_threshold=0.3, slope_threshold=0.001, window_fraction=0.05):
    """
    Reject unfinished, diverged and unstable runs.

    Rules apply in order and the first one that fires is recorded:
    unfinished runs; final loss above ``divergence_threshold``; final loss
    more than ``gap_threshold`` above the best finished run at the same
    (N, D); and a smoothed-curve window slope above ``slope_threshold``.
    """
    best = best_losses_by_nd(runs)
    result = FilterResult()
    for run in runs:
        reason = None
        if not run.finished:
            reason = RULE_UNFINISHED
        elif run.final_loss > divergence_threshold:
            reason = RULE_DIVERGED
        elif run.final_loss > best[nd_key(run.config)] + gap_threshold:
            reason = RULE_GAP
        elif run.curve:
            slope = max_window_slope(run.steps, run.losses, window_fraction)
            if slope is not None and slope > slope_threshold:
                reason = RULE_UNSTABLE
        if reason is None:
            result.kept.append(run)
        else:
            result.rejected.append((run, reason))

    logger.info(f"Filtered {len(runs)} runs: kept {len(result.kept)}, rejected {result.rejection_counts()}")
    return result
