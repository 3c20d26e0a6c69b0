import numpy as np

from configs.schema import canonicalize
from utils.exceptions import ArgumentError

FINAL = "final"
CURVE = "curve"
TARGET_KINDS = (FINAL, CURVE)


class TrainedPredictor:
    """
    A trained regressor plus the baselines its residuals are measured against.

    A final-loss model predicts ``baseline(N, D) + residual(config)``. A
    curve-point model takes ``frac`` as an extra field and measures every
    point against the same final-loss baseline.
    """

    def __init__(self, model, baselines, target_kind=FINAL, residual_target=True, report=None):
        if target_kind not in TARGET_KINDS:
            raise ArgumentError(f"Unknown target kind {target_kind!r}", module="regressor")
        self.model = model
        self.baselines = baselines
        self.target_kind = target_kind
        self.residual_target = residual_target
        self.report = report

    def baseline(self, config):
        return self.baselines.predict(config) if self.residual_target else 0.0

    def _vector(self, config, frac=None):
        if self.target_kind == CURVE:
            return canonicalize(config, 1.0 if frac is None else frac)
        return canonicalize(config)

    def predict_residuals(self, configs, fracs=None):
        vectors = [self._vector(config, None if fracs is None else fracs[i]) for i, config in enumerate(configs)]
        if not vectors:
            return np.zeros(0)
        return self.model.predict(self.model.encode(vectors))

    def predict_losses(self, configs):
        """Final-loss predictions for a batch of configs."""
        configs = list(configs)
        baselines = np.array([self.baseline(config) for config in configs], dtype=np.float64)
        return baselines + self.predict_residuals(configs)

    def predict_final_loss(self, config):
        return float(self.predict_losses([config])[0])

    def predict_curve(self, config, fracs):
        """[(step, loss)] at each ``frac``; ``step = round(frac * total_steps)``."""
        if self.target_kind != CURVE:
            raise ArgumentError("Curve prediction needs a curve-point model", module="regressor")
        fracs = [float(frac) for frac in fracs]
        for frac in fracs:
            if not 0.0 < frac <= 1.0:
                raise ArgumentError(f"frac must lie in (0, 1], got {frac!r}", module="regressor")
        if fracs != sorted(fracs):
            raise ArgumentError("fracs must be sorted ascending", module="regressor")
        baseline = self.baseline(config)
        residuals = self.predict_residuals([config] * len(fracs), fracs)
        return [(int(round(frac * config.total_steps)), float(baseline + residual))
                for frac, residual in zip(fracs, residuals)]
