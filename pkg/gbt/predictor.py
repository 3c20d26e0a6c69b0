import json
import logging
from pathlib import Path

import numpy as np

from configs.schema import canonicalize, schema_hash
from lawfit.baselines import BaselineSet
from regressor.training import build_examples
from utils.exceptions import ArgumentError, SchemaError, ScopeError

from .forest import BoostedForest, fit_gbt

logger = logging.getLogger(__name__)


class GBTPredictor:
    """Boosted-tree residuals on top of the same Chinchilla baselines the regressor uses."""

    def __init__(self, forest, baselines, residual_target=True):
        self.forest = forest
        self.baselines = baselines
        self.residual_target = residual_target

    def baseline(self, config):
        return self.baselines.predict(config) if self.residual_target else 0.0

    def predict_losses(self, configs):
        configs = list(configs)
        if not configs:
            return np.zeros(0)
        baselines = np.array([self.baseline(config) for config in configs], dtype=np.float64)
        return baselines + self.forest.predict([canonicalize(config) for config in configs])

    def predict_final_loss(self, config):
        return float(self.predict_losses([config])[0])

    def to_dict(self):
        return {
            "schema_hash": schema_hash(),
            "residual_target": self.residual_target,
            "forest": self.forest.to_dict(),
            "baselines": self.baselines.to_dict(),
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")
        return path

    @classmethod
    def load(cls, path):
        payload = json.loads(Path(path).read_text())
        if payload.get("schema_hash") != schema_hash():
            raise SchemaError(f"Forest {path} was written for a different field table", module="gbt")
        return cls(BoostedForest.from_dict(payload["forest"]), BaselineSet.from_dict(payload["baselines"]),
                   payload["residual_target"])


def train_gbt(dataset, params, baselines, residual_target=True):
    """Fit a forest on the residual targets of ``dataset.train``."""
    runs = list(dataset.train)
    if not runs:
        raise ArgumentError("Cannot boost on an empty training split", module="gbt")
    if residual_target and not baselines.covers(run.config for run in runs):
        raise ScopeError("Baselines do not cover every source in the training split", module="gbt")
    vectors, targets = build_examples(runs, baselines, residual_target=residual_target)
    logger.info(f"Boosting on {len(targets)} runs: {params}")
    return GBTPredictor(fit_gbt(vectors, targets, params), baselines, residual_target)
