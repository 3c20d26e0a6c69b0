import json
import logging
from pathlib import Path

from utils.exceptions import FitError, ScopeError

from .chinchilla import ChinchillaFit, fit_chinchilla, predict_chinchilla, residual_target
from .frontier import select_best_per_group

logger = logging.getLogger(__name__)


class BaselineSet:
    """
    Chinchilla baselines keyed by scope.

    With ``per_optimizer`` false a scope is ``(source, None)``; otherwise it is
    ``(source, optimizer)`` and a config only resolves against its own
    optimizer's fit.
    """

    def __init__(self, fits=(), per_optimizer=False):
        self.per_optimizer = per_optimizer
        self.fits = {tuple(fit.scope): fit for fit in fits}

    @classmethod
    def fit(cls, runs, per_optimizer=False, **fit_options):
        scopes = sorted({(run.source, run.config.optimizer if per_optimizer else None) for run in runs},
                        key=lambda scope: (scope[0], scope[1] or ""))
        fits = []
        for scope in scopes:
            points = select_best_per_group(runs, scope)
            try:
                fits.append(fit_chinchilla(points, scope=scope, **fit_options))
            except FitError as e:
                if not per_optimizer:
                    raise FitError(f"Scope {scope}: {e}") from e
                logger.warning(f"Skipping per-optimizer baseline for scope {scope}: {e}")
        return cls(fits, per_optimizer=per_optimizer)

    def scope_for(self, config):
        return (config.source, config.optimizer if self.per_optimizer else None)

    def baseline_for(self, config):
        scope = self.scope_for(config)
        try:
            return self.fits[scope]
        except KeyError:
            raise ScopeError(f"No Chinchilla baseline fitted for scope {scope}") from None

    def predict(self, config):
        return predict_chinchilla(self.baseline_for(config), config.model_size_N, config.data_size_D)

    def residual(self, loss, config):
        return residual_target(loss, self.baseline_for(config), config.model_size_N, config.data_size_D)

    def covers(self, configs):
        return all(self.scope_for(config) in self.fits for config in configs)

    def to_dict(self):
        return {"per_optimizer": self.per_optimizer, "fits": [self.fits[scope].to_dict() for scope in self.scopes()]}

    @classmethod
    def from_dict(cls, payload):
        return cls([ChinchillaFit.from_dict(fit) for fit in payload["fits"]],
                   per_optimizer=payload.get("per_optimizer", False))

    def scopes(self):
        return sorted(self.fits, key=lambda scope: (scope[0], scope[1] or ""))

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __len__(self):
        return len(self.fits)
