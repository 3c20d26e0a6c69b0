import logging
from dataclasses import dataclass, field

import numpy as np

from configs.schema import canonicalize
from utils.exceptions import ArgumentError, ScopeError, TrainingError

from .features import FieldLayout, InputScaler
from .model import Architecture, RegressorModel
from .optim import AdamWHyper, AdamWState, adamw_step, lr_at, steps_per_epoch, warmup_steps_for
from .predictor import FINAL, CURVE, TrainedPredictor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StagePlan:
    epochs: int
    peak_lr: float
    warmup_ratio: float | None = None
    warmup_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or not self.peak_lr > 0:
            raise ArgumentError(f"Invalid stage plan {self}", module="regressor")


@dataclass(frozen=True)
class TrainPlan:
    stage1: StagePlan = StagePlan(epochs=20, peak_lr=5e-5, warmup_ratio=0.1)
    stage2: StagePlan = StagePlan(epochs=200, peak_lr=1e-5, warmup_steps=1000)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 480
    reset_optimizer_state: bool = True
    seed: int = 0
    residual_target: bool = True
    curve_points: int = 30

    @classmethod
    def from_config(cls, section, target_kind=FINAL):
        """Build the plan from the ``train`` section of the pipeline config."""
        stages = section["curve" if target_kind == CURVE else "final"]
        optimizer = section["optimizer"]
        return cls(
            stage1=StagePlan(**stages["stage1"]),
            stage2=StagePlan(**stages["stage2"]),
            beta1=optimizer["beta1"],
            beta2=optimizer["beta2"],
            eps=optimizer["eps"],
            weight_decay=optimizer["weight_decay"],
            batch_size=int(optimizer["batch_size"]),
            seed=section["seed"],
            residual_target=section["residual_target"],
            curve_points=section["curve_points"],
        )

    def hyper(self, lr):
        return AdamWHyper(lr=lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, weight_decay=self.weight_decay)


@dataclass
class TrainingReport:
    epochs: list = field(default_factory=list)

    def log_epoch(self, stage, epoch, train_mse, val_mae=None):
        self.epochs.append({"stage": stage, "epoch": epoch, "train_mse": train_mse, "val_mae": val_mae})

    def final_mse(self, stage):
        values = [row["train_mse"] for row in self.epochs if row["stage"] == stage]
        return values[-1] if values else None


def curve_checkpoints(run, count):
    """Up to ``count`` uniformly spaced (frac, loss) points from the logged curve, always including the end."""
    if not run.curve:
        return [(1.0, run.final_loss)]
    positions = np.unique(np.round(np.linspace(0, len(run.curve) - 1, min(count, len(run.curve)))).astype(int))
    points = []
    for position in positions:
        step, loss = run.curve[position]
        frac = min(step / run.config.total_steps, 1.0)
        if frac > 0:
            points.append((frac, loss))
    return points


def build_examples(runs, baselines, target_kind=FINAL, residual_target=True, curve_points=30):
    """Feature vectors and regression targets. Curve points use the run's final-loss baseline."""
    vectors, targets = [], []
    for run in runs:
        baseline = baselines.predict(run.config) if residual_target else 0.0
        if target_kind == CURVE:
            fv = canonicalize(run.config)
            for frac, loss in curve_checkpoints(run, curve_points):
                vectors.append(fv.with_frac(frac))
                targets.append(loss - baseline)
        else:
            vectors.append(canonicalize(run.config))
            targets.append(run.final_loss - baseline)
    return vectors, np.array(targets, dtype=np.float64)


def run_stage(model, stage, plan, stage_plan, inputs, targets, rng, state, report, validation=None):
    """Train ``model`` in place for one stage; returns the optimizer state."""
    n = len(targets)
    batch_size = min(plan.batch_size, n)
    total_steps = stage_plan.epochs * steps_per_epoch(n, batch_size)
    warmup = warmup_steps_for(total_steps, stage_plan.warmup_ratio, stage_plan.warmup_steps)
    blocks = model.stage_blocks(stage)
    step = 0
    for epoch in range(stage_plan.epochs):
        snapshot = model.copy_params()
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            index = order[start:start + batch_size]
            loss, grads = model.mse_gradients(inputs.take(index), targets[index], blocks)
            if not np.isfinite(loss):
                model.params = snapshot
                raise TrainingError(f"Non-finite training loss in stage {stage}, epoch {epoch + 1}")
            step += 1
            hyper = plan.hyper(lr_at(step, total_steps, warmup, stage_plan.peak_lr))
            try:
                model.params, state = adamw_step(model.params, grads, state, hyper)
            except TrainingError as e:
                model.params = snapshot
                raise TrainingError(f"Stage {stage}, epoch {epoch + 1}: {e}") from e

        train_mse = float(np.mean((model.predict(inputs) - targets) ** 2))
        val_mae = None
        if validation is not None:
            val_inputs, val_targets = validation
            val_mae = float(np.mean(np.abs(model.predict(val_inputs) - val_targets)))
        if not np.isfinite(train_mse):
            model.params = snapshot
            raise TrainingError(f"Non-finite parameters after stage {stage}, epoch {epoch + 1}")
        report.log_epoch(stage, epoch + 1, train_mse, val_mae)
        logger.info(f"stage {stage} epoch {epoch + 1}/{stage_plan.epochs}: train_mse={train_mse:.6g}"
                    + (f" val_mae={val_mae:.6g}" if val_mae is not None else ""))
    return state


def train(dataset, plan, baselines, architecture=None, target_kind=FINAL):
    """
    Two-stage training on ``dataset.train``; ``dataset.id_val`` (when present)
    is scored every epoch.

    Stage 1 trains the field encoders and the head with the trunk frozen;
    stage 2 trains everything. Each stage warms up and then decays linearly
    to zero. On a non-finite value the last finite parameters are kept and
    returned on the raised ``TrainingError``.
    """
    architecture = architecture or Architecture()
    runs = list(dataset.train)
    if not runs:
        raise ArgumentError("Cannot train on an empty training split", module="regressor")
    if plan.residual_target and not baselines.covers(run.config for run in runs):
        raise ScopeError("Baselines do not cover every source in the training split", module="regressor")

    vectors, targets = build_examples(runs, baselines, target_kind, plan.residual_target, plan.curve_points)
    layout = FieldLayout.from_schema(with_frac=target_kind == CURVE)
    numerical, present, _ = layout.raw_arrays(vectors)
    scaler = InputScaler.fit(numerical, present)
    model = RegressorModel.initialize(architecture, layout, np.random.default_rng([plan.seed, 0]), scaler)
    inputs = model.encode(vectors)

    validation = None
    val_runs = list(getattr(dataset, "id_val", []) or [])
    if val_runs and (not plan.residual_target or baselines.covers(run.config for run in val_runs)):
        val_vectors, val_targets = build_examples(val_runs, baselines, target_kind, plan.residual_target,
                                                  plan.curve_points)
        validation = (model.encode(val_vectors), val_targets)

    report = TrainingReport()
    predictor = TrainedPredictor(model=model, baselines=baselines, target_kind=target_kind,
                                 residual_target=plan.residual_target, report=report)
    logger.info(f"Training {target_kind} regressor: {len(targets)} examples, {model.parameter_count} parameters")
    rng = np.random.default_rng([plan.seed, 1])
    state = AdamWState()
    try:
        for stage, stage_plan in ((1, plan.stage1), (2, plan.stage2)):
            if stage == 2 and plan.reset_optimizer_state:
                state = AdamWState()
            state = run_stage(model, stage, plan, stage_plan, inputs, targets, rng, state, report, validation)
    except TrainingError as e:
        e.predictor = predictor
        logger.error(f"Training aborted, keeping the last finite parameters: {e}")
        raise
    return predictor
