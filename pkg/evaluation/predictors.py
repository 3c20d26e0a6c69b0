import json
from pathlib import Path

import numpy as np

from gbt.predictor import GBTPredictor
from lawfit.baselines import BaselineSet
from regressor.checkpoint import CHECKPOINT_FORMAT, load_checkpoint
from utils.exceptions import FormatError


class ChinchillaPredictor:
    """Configuration-agnostic baseline: the Chinchilla value at the config's (N, D)."""

    def __init__(self, baselines):
        self.baselines = baselines

    def predict_losses(self, configs):
        return np.array([self.baselines.predict(config) for config in configs], dtype=np.float64)

    def predict_final_loss(self, config):
        return self.baselines.predict(config)


def load_predictor(path):
    """Load a regressor checkpoint, a boosted forest or a baselines file, whichever ``path`` holds."""
    path = Path(path)
    payload = json.loads(path.read_text())
    if payload.get("format") == CHECKPOINT_FORMAT:
        return load_checkpoint(path)
    if "forest" in payload:
        return GBTPredictor.load(path)
    if "fits" in payload:
        return ChinchillaPredictor(BaselineSet.from_dict(payload))
    raise FormatError(f"{path} is not a checkpoint, forest or baselines file", module="eval")
