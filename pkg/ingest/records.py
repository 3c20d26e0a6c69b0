import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from utils.exceptions import ArgumentError, FormatError

logger = logging.getLogger(__name__)

DEFAULT_SMOOTHING = 0.99


@dataclass(frozen=True)
class RunRecord:
    """One pretraining run. ``curve`` holds the smoothed (step, loss) pairs."""

    config: object
    final_loss: float
    run_id: str
    finished: bool = True
    curve: tuple = ()

    def __post_init__(self):
        if not math.isfinite(self.final_loss) or self.final_loss <= 0:
            raise ArgumentError(f"Run {self.run_id}: final loss must be finite and positive", module="ingest")

    @property
    def source(self):
        return self.config.source

    @property
    def steps(self):
        return np.array([step for step, _ in self.curve], dtype=np.int64)

    @property
    def losses(self):
        return np.array([loss for _, loss in self.curve], dtype=np.float64)

    def to_dict(self):
        payload = self.config.to_dict()
        payload.update({
            "run_id": self.run_id,
            "finished": self.finished,
            "final_loss": self.final_loss,
            "curve": [[int(step), float(loss)] for step, loss in self.curve],
            "smoothed": True,
        })
        return payload


class ParsedRuns(list):
    """Runs parsed from a log file; ``malformed`` lists (line number, errors)."""

    def __init__(self, runs=(), malformed=()):
        super().__init__(runs)
        self.malformed = list(malformed)


def smooth_curve(curve, coeff=DEFAULT_SMOOTHING):
    """Exponential moving average with s[0] = x[0] and s[t] = c*s[t-1] + (1-c)*x[t].

    ``curve`` is either a 1-D sequence of losses or (step, loss) pairs; the
    output has the same shape with only the losses smoothed.
    """
    if not 0.0 <= coeff < 1.0:
        raise ArgumentError(f"Smoothing coefficient must lie in [0, 1), got {coeff!r}", module="ingest")
    values = np.asarray(curve, dtype=np.float64)
    if values.size == 0:
        raise ArgumentError("Cannot smooth an empty curve", module="ingest")
    if values.ndim == 2:
        smoothed = values.copy()
        smoothed[:, 1] = smooth_curve(values[:, 1], coeff)
        return smoothed
    smoothed, _ = lfilter([1.0 - coeff], [1.0, -coeff], values, zi=[coeff * values[0]])
    return smoothed


def parse_runs(path, format="jsonl", smoothing_coeff=DEFAULT_SMOOTHING, max_malformed_fraction=0.5):
    """Parse a line-delimited run log into ``RunRecord`` objects.

    Malformed lines are collected with their 1-based line numbers; more than
    ``max_malformed_fraction`` malformed lines is a format error.
    """
    from .serializers import RunRecordSerializer

    if format != "jsonl":
        raise FormatError(f"Unsupported run-log format {format!r}")
    runs, malformed = [], []
    total = 0
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                malformed.append((line_number, {"line": [str(e)]}))
                continue
            if not isinstance(payload, dict):
                malformed.append((line_number, {"line": ["Expected a JSON object"]}))
                continue
            serializer = RunRecordSerializer(data=payload, context={"smoothing_coeff": smoothing_coeff})
            if not serializer.is_valid():
                malformed.append((line_number, serializer.errors))
                continue
            runs.append(serializer.to_record())

    for line_number, errors in malformed:
        logger.warning(f"{Path(path).name}:{line_number} malformed run: {json.dumps(errors)}")
    if total and len(malformed) / total > max_malformed_fraction:
        raise FormatError(
            f"{len(malformed)} of {total} lines in {path} are malformed",
            details={"malformed_lines": [number for number, _ in malformed]},
        )
    logger.info(f"Parsed {len(runs)} runs from {path} ({len(malformed)} malformed lines)")
    return ParsedRuns(runs, malformed)


def write_runs(runs, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for run in runs:
            handle.write(json.dumps(run.to_dict(), sort_keys=True) + "\n")
    return path
