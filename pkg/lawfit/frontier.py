from dataclasses import dataclass

from configs.schema import nd_key


@dataclass(frozen=True)
class FrontierPoint:
    """The lowest-loss run among all runs sharing (N, D) within a scope."""

    N: float
    D: float
    best_loss: float
    best_config: object
    run_id: str = ""


def in_scope(config, scope):
    """``scope`` is ``None``, ``(source, None)`` or ``(source, optimizer)``."""
    if scope is None:
        return True
    source, optimizer = scope
    return config.source == source and (optimizer is None or config.optimizer == optimizer)


def select_best_per_group(runs, scope=None):
    best = {}
    for run in runs:
        if not in_scope(run.config, scope):
            continue
        key = nd_key(run.config)
        current = best.get(key)
        if current is None or (run.final_loss, run.run_id) < (current.final_loss, current.run_id):
            best[key] = run
    return [
        FrontierPoint(N=run.config.model_size_N, D=run.config.data_size_D, best_loss=run.final_loss,
                      best_config=run.config, run_id=run.run_id)
        for _, run in sorted(best.items())
    ]
