"""
Exhaustive sweeps over a predicted loss surface.

``sweep`` evaluates a predictor on every grid point, ``refine_optimum`` fits a
quadratic in (log lr, log batch) to the near-optimal points and
``recommend`` combines the two for a target (N, D) under fixed-field
constraints.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from utils.exceptions import ArgumentError, SchemaError, SweepError

from .grid import SweepAxis, SweepGrid

logger = logging.getLogger(__name__)

MIN_POINTS_2D = 6
MIN_POINTS_1D = 3
CURVATURE_EPS = 1e-9


@dataclass(frozen=True)
class SurfacePoint:
    config: object
    loss: float
    index: int


@dataclass
class SweepResult:
    surface: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def best(self):
        return self.surface[0]


def sweep(predictor, grid):
    """
    Predicted loss at every point of ``grid``, ascending by loss then grid index.

    Points whose derived config is invalid are skipped and recorded as
    ``(index, values, message)``.
    """
    configs, indices, skipped = [], [], []
    for index, values in grid.points():
        try:
            configs.append(grid.base_config.with_values(**values))
            indices.append(index)
        except SchemaError as e:
            logger.warning(f"Skipping grid point {index} {values}: {e}")
            skipped.append((index, values, str(e)))
    if not configs:
        raise SweepError(f"All {grid.size} grid points produced invalid configurations")

    losses = np.asarray(predictor.predict_losses(configs), dtype=np.float64)
    surface = sorted((SurfacePoint(config, float(loss), index) for config, loss, index in zip(configs, losses, indices)),
                     key=lambda point: (point.loss, point.index))
    logger.info(f"Swept {len(surface)} of {grid.size} grid points; best loss {surface[0].loss:.6g}")
    return SweepResult(surface=surface, skipped=skipped)


@dataclass(frozen=True)
class Refinement:
    lr: float
    batch_size: float
    refined: bool
    note: str = ""


def _near_optimal(surface, near_frac):
    losses = np.array([loss for _, _, loss in surface], dtype=np.float64)
    best = int(np.argmin(losses))
    cutoff = losses[best] + near_frac * abs(losses[best])
    near = [point for point, loss in zip(surface, losses) if loss <= cutoff]
    return surface[best], near


def refine_optimum(surface, near_frac=0.01):
    """
    Vertex of a least-squares quadratic in (log lr, log batch) fitted to the
    points within ``near_frac`` of the minimum loss.

    When the surface holds a single batch size (batch not swept or fixed by
    a constraint) the quadratic is in log lr only. Falls back to the best
    grid point (``refined=False``) when there are too few points, the fit is
    rank deficient or the quadratic is not positive definite. A swept batch
    axis whose near-optimal band collapses to one batch size falls back too.
    """
    surface = [(float(lr), float(batch), float(loss)) for lr, batch, loss in surface]
    if not surface:
        raise ArgumentError("Cannot refine an empty surface", module="selection")
    (best_lr, best_batch, _), near = _near_optimal(surface, near_frac)

    def fallback(note):
        logger.info(f"Quadratic refinement skipped: {note}")
        return Refinement(lr=best_lr, batch_size=best_batch, refined=False, note=note)

    x = np.log([lr for lr, _, _ in near])
    y = np.log([batch for _, batch, _ in near])
    z = np.array([loss for _, _, loss in near])
    tolerance = CURVATURE_EPS * max(1.0, float(np.abs(z).max()))

    if len({batch for _, batch, _ in surface}) == 1:
        if len(np.unique(x)) < MIN_POINTS_1D:
            return fallback(f"{len(np.unique(x))} near-optimal learning rates, need {MIN_POINTS_1D}")
        design = np.column_stack([np.ones_like(x), x, x * x])
        if np.linalg.matrix_rank(design) < 3:
            return fallback("rank-deficient 1-D design")
        (_, b, a), *_ = np.linalg.lstsq(design, z, rcond=None)
        if not a > tolerance:
            return fallback("1-D quadratic is not convex")
        return Refinement(lr=math.exp(-b / (2 * a)), batch_size=best_batch, refined=True, note="1-D")

    if len(near) < MIN_POINTS_2D:
        return fallback(f"{len(near)} near-optimal points, need {MIN_POINTS_2D}")
    design = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    if np.linalg.matrix_rank(design) < 6:
        return fallback("rank-deficient 2-D design")
    (_, bx, by, axx, axy, ayy), *_ = np.linalg.lstsq(design, z, rcond=None)
    hessian = np.array([[2 * axx, axy], [axy, 2 * ayy]])
    if np.any(np.linalg.eigvalsh(hessian) <= tolerance):
        return fallback("quadratic is not positive definite")
    vertex = np.linalg.solve(hessian, -np.array([bx, by]))
    return Refinement(lr=math.exp(vertex[0]), batch_size=math.exp(vertex[1]), refined=True, note="2-D")


@dataclass
class Recommendation:
    best_grid_config: object
    best_grid_loss: float
    refined_point: tuple
    config: object
    predicted_loss: float
    refined: bool
    note: str
    predicted_surface: list
    skipped: list

    @property
    def relative_loss(self):
        """Predicted loss of the recommendation relative to the swept minimum."""
        return (self.predicted_loss - self.best_grid_loss) / self.best_grid_loss

    def relative_losses(self):
        return [(point.config, (point.loss - self.best_grid_loss) / self.best_grid_loss)
                for point in self.predicted_surface]

    def summary(self):
        config = self.config
        return {
            "best_grid": {"peak_lr": self.best_grid_config.peak_lr, "batch_size": self.best_grid_config.batch_size,
                          "loss": self.best_grid_loss},
            "refined_point": {"peak_lr": self.refined_point[0], "batch_size": self.refined_point[1]},
            "recommended": {"peak_lr": config.peak_lr, "batch_size": config.batch_size,
                            "predicted_loss": self.predicted_loss},
            "refined": self.refined,
            "note": self.note,
            "relative_loss": self.relative_loss,
            "surface_points": len(self.predicted_surface),
            "skipped_points": len(self.skipped),
        }


def retarget(config, N, D):
    """``config`` moved to (N, D); total steps follow D at the same batch size."""
    total_steps = max(1, round(config.total_steps * D / config.data_size_D))
    return config.with_values(model_size_N=float(N), data_size_D=float(D), total_steps=total_steps)


def recommend(predictor, N, D, grid, constraints=None, near_frac=0.01):
    """
    Sweep ``grid`` at (N, D) with ``constraints`` fixed and refine the
    (lr, batch) optimum.

    Constrained fields are removed from the grid axes. Other axes keep
    their best grid value. The refined point is re-queried and kept only
    if its predicted loss is within ``near_frac`` of the grid minimum.
    """
    constraints = dict(constraints or {})
    try:
        base = retarget(grid.base_config, N, D).with_values(**constraints)
    except (SchemaError, TypeError) as e:
        raise SweepError(f"Constraints {constraints} do not give a valid configuration: {e}") from e
    free = grid.without(constraints) if any(a.field not in constraints for a in grid.axes) else None
    if free is None:
        name, value = next(iter(constraints.items()))
        free = SweepGrid(base, (SweepAxis(name, (value,)),))
    result = sweep(predictor, free.with_base(base))
    best = result.best

    fields = set(free.fields)
    note, refinement = "lr not swept", None
    if "peak_lr" in fields:
        others = [name for name in free.fields if name not in ("peak_lr", "batch_size")]
        slice_points = [point for point in result.surface
                        if all(getattr(point.config, name) == getattr(best.config, name) for name in others)]
        refinement = refine_optimum([(p.config.peak_lr, p.config.batch_size, p.loss) for p in slice_points],
                                    near_frac)
        note = refinement.note

    config, loss, refined = best.config, best.loss, False
    refined_point = (best.config.peak_lr, best.config.batch_size)
    if refinement is not None and refinement.refined:
        refined_point = (refinement.lr, refinement.batch_size)
        changes = {"peak_lr": refinement.lr}
        if "batch_size" in fields:
            changes["batch_size"] = max(1, int(round(refinement.batch_size)))
        try:
            candidate = best.config.with_values(**changes)
            candidate_loss = float(predictor.predict_losses([candidate])[0])
        except SchemaError as e:
            note = f"refined point invalid: {e}"
        else:
            if candidate_loss <= best.loss + near_frac * abs(best.loss):
                config, loss, refined = candidate, candidate_loss, True
            else:
                note = f"refined point predicted {candidate_loss:.6g}, above the near-optimal band"
                logger.info(f"Refinement rejected: {note}")

    return Recommendation(
        best_grid_config=best.config, best_grid_loss=best.loss, refined_point=refined_point, config=config,
        predicted_loss=loss, refined=refined, note=note, predicted_surface=result.surface, skipped=result.skipped,
    )
