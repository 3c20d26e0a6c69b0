import io
import json
import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase, tag

from configs.schema import canonicalize
from ingest.records import write_runs
from ingest.splits import DatasetSplits, split_dataset
from lawfit.baselines import BaselineSet
from lawfit.chinchilla import ChinchillaFit, predict_chinchilla
from synth.generate import SynthDesign, generate_synthetic_runs
from synth.oracle import OracleParams
from utils.exceptions import ArgumentError, SchemaError, ScopeError, ShapeError, TrainingError
from utils.testing import make_run, run_config

from .checkpoint import load_checkpoint, save_checkpoint
from .features import FieldLayout, InputScaler
from .model import Architecture, RegressorModel, backward, forward
from .optim import AdamWHyper, AdamWState, adamw_step, lr_at, steps_per_epoch, warmup_steps_for
from .predictor import CURVE, FINAL, TrainedPredictor
from .training import StagePlan, TrainPlan, build_examples, curve_checkpoints, train

TINY = Architecture(embed_dim=4, encoder_hidden=4, trunk_layers=2, trunk_width=8)
STEPLAW_FIT = ChinchillaFit(E=1.7, A=6.0, B=1.2, alpha=0.34, beta=0.28, scope=("steplaw", None))
STEPLAW_BASELINES = BaselineSet([STEPLAW_FIT])


def sample_configs():
    return [run_config(), run_config(peak_lr=2e-3, batch_size=480, model_size_N=130.0, weight_decay=0.0)]


def tiny_model(seed=0, with_frac=False, head_scale=0.5):
    layout = FieldLayout.from_schema(with_frac=with_frac)
    vectors = [canonicalize(config, 0.5 if with_frac else None) for config in sample_configs()]
    numerical, present, _ = layout.raw_arrays(vectors)
    model = RegressorModel.initialize(TINY, layout, np.random.default_rng(seed), InputScaler.fit(numerical, present))
    rng = np.random.default_rng(seed + 100)
    model.params["head.weight"] = rng.normal(0.0, head_scale, size=model.params["head.weight"].shape)
    model.params["head.bias"] = np.array([0.1])
    return model


def reference_forward(model, fv):
    """Straight-line evaluation of the network, one field at a time."""

    def gelu(x):
        return np.vectorize(lambda v: 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))(x)

    params, layout, scaler = model.params, model.layout, model.scaler
    embeddings = []
    for name, value in zip(fv.names, fv.values):
        if name in layout.categorical_fields:
            embeddings.append(params[f"embed.{name}"][value])
        elif value is None:
            embeddings.append(np.zeros(model.architecture.embed_dim))
        else:
            j = layout.numerical_fields.index(name)
            x = (value - scaler.shift[j]) / scaler.scale[j]
            hidden = gelu(x * params["num.w1"][j] + params["num.b1"][j])
            embeddings.append(hidden @ params["num.w2"][j] + params["num.b2"][j])
    activation = np.concatenate(embeddings)
    for index in range(model.architecture.trunk_layers):
        activation = gelu(activation @ params[f"trunk.{index}.weight"] + params[f"trunk.{index}.bias"])
    return float(activation @ params["head.weight"] + params["head.bias"][0])


def zero_model(layout=None):
    model = RegressorModel.initialize(TINY, layout or FieldLayout.from_schema(), np.random.default_rng(0))
    model.params = {name: np.zeros_like(array) for name, array in model.params.items()}
    return model


def constant_plan(stage1_epochs, stage2_epochs, lr=1e-2, **overrides):
    values = dict(
        stage1=StagePlan(epochs=stage1_epochs, peak_lr=lr, warmup_ratio=0.1),
        stage2=StagePlan(epochs=stage2_epochs, peak_lr=lr / 2, warmup_steps=1000),
        weight_decay=0.0, batch_size=8, seed=0,
    )
    values.update(overrides)
    return TrainPlan(**values)


def lr_runs(offset=0.0, count=8):
    runs = []
    for k in range(count):
        config = run_config(peak_lr=1e-4 * (k + 1), batch_size=120 * (k % 4 + 1))
        loss = predict_chinchilla(STEPLAW_FIT, config.model_size_N, config.data_size_D) + offset
        runs.append(make_run(f"lr-{k}", loss, peak_lr=config.peak_lr, batch_size=config.batch_size))
    return runs


class ForwardTest(SimpleTestCase):
    def test_zero_weights_output_zero(self):
        model = zero_model()
        for config in sample_configs():
            self.assertEqual(forward(model, canonicalize(config)), 0.0)

    def test_deterministic(self):
        model = tiny_model()
        fv = canonicalize(run_config())
        self.assertEqual(forward(model, fv), forward(model, fv))

    def test_matches_reference_evaluation(self):
        model = tiny_model(seed=3)
        for config in sample_configs() + [run_config(weight_decay=None, beta1=None, beta2=None)]:
            fv = canonicalize(config)
            self.assertAlmostEqual(forward(model, fv), reference_forward(model, fv), places=12)

    def test_matches_reference_with_frac(self):
        model = tiny_model(seed=4, with_frac=True)
        fv = canonicalize(run_config(), 0.3907)
        self.assertAlmostEqual(forward(model, fv), reference_forward(model, fv), places=12)

    def test_schema_mismatch(self):
        model = tiny_model()
        with self.assertRaises(ShapeError):
            forward(model, canonicalize(run_config(), 0.5))
        with self.assertRaises(ShapeError):
            forward(tiny_model(with_frac=True), canonicalize(run_config()))

    def test_parameter_count_reported(self):
        model = tiny_model()
        self.assertEqual(model.parameter_count, sum(array.size for array in model.params.values()))
        self.assertTrue(all(np.all(np.isfinite(array)) for array in model.params.values()))


class BackwardTest(SimpleTestCase):
    def test_zero_error_zero_gradients(self):
        model = tiny_model()
        fv = canonicalize(run_config())
        for name, grad in backward(model, fv, forward(model, fv)).items():
            self.assertFalse(np.any(grad), name)

    def test_doubling_error_doubles_head_gradient(self):
        model = tiny_model()
        fv = canonicalize(run_config())
        output = forward(model, fv)
        once = backward(model, fv, output - 1.0)["head.weight"]
        twice = backward(model, fv, output - 2.0)["head.weight"]
        np.testing.assert_allclose(twice, 2.0 * once, rtol=1e-9)

    def test_finite_differences(self):
        model = tiny_model(seed=1)
        config = run_config(optimizer_extras={"custom_beta3": 0.5})
        fv = canonicalize(config)
        target = forward(model, fv) - 0.7
        grads = backward(model, fv, target)
        rng = np.random.default_rng(7)
        step = 1e-5
        for name, array in model.params.items():
            grad = grads[name]
            flat_grad = grad.ravel()
            nonzero = np.flatnonzero(flat_grad)
            candidates = nonzero if len(nonzero) else np.arange(flat_grad.size)
            picks = rng.choice(candidates, size=min(4, len(candidates)), replace=False)
            for flat_index in picks:
                index = np.unravel_index(flat_index, array.shape)
                original = array[index]
                array[index] = original + step
                plus = (forward(model, fv) - target) ** 2
                array[index] = original - step
                minus = (forward(model, fv) - target) ** 2
                array[index] = original
                numeric = (plus - minus) / (2 * step)
                analytic = flat_grad[flat_index]
                scale = max(abs(numeric), abs(analytic))
                self.assertLessEqual(abs(numeric - analytic), 1e-4 * scale + 1e-9, (name, index, numeric, analytic))

    def test_every_block_has_a_gradient(self):
        model = tiny_model()
        grads = backward(model, canonicalize(run_config()), 0.0)
        self.assertEqual(set(grads), set(model.params))
        for name in grads:
            self.assertEqual(grads[name].shape, model.params[name].shape, name)

    def test_absent_numerical_slot_has_no_encoder_gradient(self):
        model = tiny_model()
        fv = canonicalize(run_config(weight_decay=None))
        grads = backward(model, fv, 0.0)
        column = model.layout.numerical_fields.index("weight_decay")
        self.assertFalse(np.any(grads["num.w2"][column]))
        self.assertFalse(np.any(grads["num.b2"][column]))


class AdamWStepTest(SimpleTestCase):
    def test_zero_gradient_decays_moments(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamWState(step=1, m={"w": np.array([0.5, 0.5])}, v={"w": np.array([0.25, 0.25])})
        _, new_state = adamw_step(params, {"w": np.zeros(2)}, state, AdamWHyper(lr=0.1, weight_decay=0.0))
        np.testing.assert_allclose(new_state.m["w"], 0.9 * state.m["w"])
        np.testing.assert_allclose(new_state.v["w"], 0.999 * state.v["w"])
        self.assertEqual(new_state.step, 2)

    def test_zero_state_zero_gradient_is_a_no_op(self):
        params = {"w": np.array([1.0, -2.0])}
        new_params, _ = adamw_step(params, {"w": np.zeros(2)}, AdamWState(), AdamWHyper(lr=0.1, weight_decay=0.0))
        np.testing.assert_array_equal(new_params["w"], params["w"])

    def test_unit_gradient_moves_by_lr(self):
        hyper = AdamWHyper(lr=0.01, beta1=0.0, beta2=0.0, eps=0.0, weight_decay=0.0)
        new_params, _ = adamw_step({"w": np.array([1.0])}, {"w": np.array([1.0])}, AdamWState(), hyper)
        np.testing.assert_allclose(new_params["w"], [0.99], rtol=1e-15)

    def test_decoupled_weight_decay(self):
        hyper = AdamWHyper(lr=0.1, weight_decay=0.5)
        new_params, _ = adamw_step({"w": np.array([2.0])}, {"w": np.array([0.0])}, AdamWState(), hyper)
        np.testing.assert_allclose(new_params["w"], [2.0 * (1 - 0.1 * 0.5)], rtol=1e-12)

    def test_non_finite_gradient_names_block(self):
        with self.assertRaisesMessage(TrainingError, "trunk.0.weight"):
            adamw_step({"trunk.0.weight": np.ones(2)}, {"trunk.0.weight": np.array([1.0, np.nan])}, AdamWState(),
                       AdamWHyper(lr=0.1))

    def test_blocks_without_gradient_untouched(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        new_params, state = adamw_step(params, {"a": np.ones(2)}, AdamWState(), AdamWHyper(lr=0.1))
        self.assertIs(new_params["b"], params["b"])
        self.assertNotIn("b", state.m)


class ScheduleTest(SimpleTestCase):
    def test_pointwise(self):
        self.assertEqual(lr_at(0, 100, 10, 1e-3), 0.0)
        self.assertAlmostEqual(lr_at(5, 100, 10, 1e-3), 5e-4)
        self.assertAlmostEqual(lr_at(10, 100, 10, 1e-3), 1e-3)
        self.assertAlmostEqual(lr_at(55, 100, 10, 1e-3), 5e-4)
        self.assertEqual(lr_at(100, 100, 10, 1e-3), 0.0)

    def test_no_warmup(self):
        self.assertEqual(lr_at(0, 10, 0, 1.0), 1.0)
        self.assertAlmostEqual(lr_at(5, 10, 0, 1.0), 0.5)

    def test_warmup_steps_capped(self):
        self.assertEqual(warmup_steps_for(2000, warmup_steps=1000), 200)
        self.assertEqual(warmup_steps_for(20000, warmup_steps=1000), 1000)
        self.assertEqual(warmup_steps_for(200, warmup_ratio=0.1), 20)

    def test_out_of_range(self):
        with self.assertRaises(ArgumentError):
            lr_at(101, 100, 10, 1e-3)
        with self.assertRaises(ArgumentError):
            lr_at(5, 100, 200, 1e-3)


class BuildExamplesTest(SimpleTestCase):
    def test_residual_targets(self):
        runs = lr_runs(offset=0.25)
        _, targets = build_examples(runs, STEPLAW_BASELINES)
        np.testing.assert_allclose(targets, 0.25, atol=1e-12)

    def test_direct_targets(self):
        runs = lr_runs()
        _, targets = build_examples(runs, STEPLAW_BASELINES, residual_target=False)
        self.assertEqual(list(targets), [run.final_loss for run in runs])

    def test_curve_points_share_final_baseline(self):
        curve = [(step, 3.0 + 1.0 / step) for step in range(1000, 127155, 1000)] + [(127155, 3.0)]
        run = make_run("curve", 3.0, curve=curve)
        points = curve_checkpoints(run, 30)
        self.assertLessEqual(len(points), 30)
        self.assertEqual(points[-1], (1.0, 3.0))
        vectors, targets = build_examples([run], STEPLAW_BASELINES, target_kind=CURVE, curve_points=30)
        baseline = STEPLAW_BASELINES.predict(run.config)
        self.assertEqual(len(vectors), len(points))
        np.testing.assert_allclose(targets, [loss - baseline for _, loss in points])
        self.assertEqual(vectors[0].frac, points[0][0])


class TrainTest(SimpleTestCase):
    def test_constant_residual_fits_in_stage_one(self):
        runs = lr_runs(offset=0.3)
        predictor = train(DatasetSplits(train=runs), constant_plan(400, 0), STEPLAW_BASELINES, TINY)
        self.assertLess(predictor.report.final_mse(1), 1e-6)
        for run in runs:
            self.assertAlmostEqual(predictor.predict_final_loss(run.config), run.final_loss, delta=2e-3)

    def test_stage_one_freezes_trunk(self):
        runs = lr_runs(offset=0.1)
        predictor = train(DatasetSplits(train=runs), constant_plan(5, 0), STEPLAW_BASELINES, TINY)
        initial = RegressorModel.initialize(TINY, FieldLayout.from_schema(), np.random.default_rng([0, 0]))
        for name in predictor.model.block_names():
            if name.startswith("trunk."):
                np.testing.assert_array_equal(predictor.model.params[name], initial.params[name])
        self.assertFalse(np.array_equal(predictor.model.params["head.bias"], initial.params["head.bias"]))

    def test_stage_two_moves_trunk(self):
        runs = lr_runs(offset=0.1)
        predictor = train(DatasetSplits(train=runs), constant_plan(2, 2), STEPLAW_BASELINES, TINY)
        initial = RegressorModel.initialize(TINY, FieldLayout.from_schema(), np.random.default_rng([0, 0]))
        self.assertFalse(np.array_equal(predictor.model.params["trunk.0.weight"], initial.params["trunk.0.weight"]))
        self.assertEqual([row["stage"] for row in predictor.report.epochs], [1, 1, 2, 2])

    def test_same_seed_identical_checkpoints(self):
        runs = generate_synthetic_runs(OracleParams(), SynthDesign(runs_per_scale=2), seed=0)
        baselines = BaselineSet([OracleParams().chinchilla])
        plan = constant_plan(2, 3, lr=1e-3, batch_size=16)
        with tempfile.TemporaryDirectory() as tmp:
            first = save_checkpoint(train(DatasetSplits(train=runs), plan, baselines, TINY), Path(tmp) / "a.json")
            second = save_checkpoint(train(DatasetSplits(train=runs), plan, baselines, TINY), Path(tmp) / "b.json")
            self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_validation_mae_reported(self):
        runs = lr_runs(offset=0.1)
        dataset = DatasetSplits(train=runs[:6], id_val=runs[6:])
        predictor = train(dataset, constant_plan(2, 1), STEPLAW_BASELINES, TINY)
        self.assertTrue(all(row["val_mae"] is not None for row in predictor.report.epochs))

    def test_uncovered_source_rejected(self):
        runs = lr_runs() + [make_run("marin", 3.0, source="marin")]
        with self.assertRaises(ScopeError):
            train(DatasetSplits(train=runs), constant_plan(1, 0), STEPLAW_BASELINES, TINY)

    def test_empty_training_split_rejected(self):
        with self.assertRaises(ArgumentError):
            train(DatasetSplits(), constant_plan(1, 0), STEPLAW_BASELINES, TINY)

    def test_divergence_keeps_last_finite_parameters(self):
        runs = lr_runs(offset=0.1)
        plan = constant_plan(3, 3, lr=1e300)
        with self.assertRaises(TrainingError) as raised:
            train(DatasetSplits(train=runs), plan, STEPLAW_BASELINES, TINY)
        predictor = raised.exception.predictor
        self.assertIsNotNone(predictor)
        for array in predictor.model.params.values():
            self.assertTrue(np.all(np.isfinite(array)))

    def test_plan_from_pipeline_config(self):
        from django.conf import settings

        plan = TrainPlan.from_config(settings.CPLAW["train"], CURVE)
        self.assertEqual(plan.stage1.epochs, settings.CPLAW["train"]["curve"]["stage1"]["epochs"])
        self.assertEqual(plan.batch_size, 128)
        self.assertTrue(plan.residual_target)


class TrainedPredictorTest(SimpleTestCase):
    def test_zero_model_returns_baseline(self):
        predictor = TrainedPredictor(zero_model(), STEPLAW_BASELINES)
        config = run_config()
        self.assertEqual(predictor.predict_final_loss(config),
                         predict_chinchilla(STEPLAW_FIT, config.model_size_N, config.data_size_D))

    def test_residual_consistency(self):
        model = tiny_model()
        predictor = TrainedPredictor(model, STEPLAW_BASELINES)
        config = run_config()
        baseline = predict_chinchilla(STEPLAW_FIT, config.model_size_N, config.data_size_D)
        self.assertAlmostEqual(predictor.predict_final_loss(config) - baseline, forward(model, canonicalize(config)),
                               places=12)

    def test_configuration_sensitive(self):
        predictor = TrainedPredictor(tiny_model(), STEPLAW_BASELINES)
        self.assertNotEqual(predictor.predict_final_loss(run_config(peak_lr=1e-4)),
                            predictor.predict_final_loss(run_config(peak_lr=4e-3)))

    def test_unknown_source(self):
        predictor = TrainedPredictor(tiny_model(), STEPLAW_BASELINES)
        with self.assertRaises(ScopeError):
            predictor.predict_final_loss(run_config(source="marin"))

    def test_direct_target_skips_baseline(self):
        model = tiny_model()
        predictor = TrainedPredictor(model, STEPLAW_BASELINES, residual_target=False)
        config = run_config(source="marin")
        self.assertEqual(predictor.predict_final_loss(config), forward(model, canonicalize(config)))

    def test_batched_matches_single(self):
        predictor = TrainedPredictor(tiny_model(), STEPLAW_BASELINES)
        configs = sample_configs()
        np.testing.assert_allclose(predictor.predict_losses(configs),
                                   [predictor.predict_final_loss(config) for config in configs], rtol=1e-12)


class PredictCurveTest(SimpleTestCase):
    def setUp(self):
        self.predictor = TrainedPredictor(tiny_model(with_frac=True), STEPLAW_BASELINES, target_kind=CURVE)

    def test_final_frac_equals_final_prediction(self):
        config = run_config()
        [(step, loss)] = self.predictor.predict_curve(config, [1.0])
        self.assertEqual(step, config.total_steps)
        self.assertEqual(loss, self.predictor.predict_final_loss(config))

    def test_steps_follow_fracs(self):
        config = run_config()
        curve = self.predictor.predict_curve(config, [0.1, 0.3907, 1.0])
        self.assertEqual([step for step, _ in curve], [round(f * config.total_steps) for f in (0.1, 0.3907, 1.0)])

    def test_frac_out_of_range(self):
        for fracs in ([0.0], [1.5], [-0.1]):
            with self.assertRaises(ArgumentError):
                self.predictor.predict_curve(run_config(), fracs)

    def test_unsorted_fracs(self):
        with self.assertRaises(ArgumentError):
            self.predictor.predict_curve(run_config(), [0.5, 0.2])

    def test_final_model_cannot_predict_curves(self):
        with self.assertRaises(ArgumentError):
            TrainedPredictor(tiny_model(), STEPLAW_BASELINES, target_kind=FINAL).predict_curve(run_config(), [0.5])


class CheckpointTest(SimpleTestCase):
    def test_round_trip_predictions(self):
        predictor = TrainedPredictor(tiny_model(seed=2), STEPLAW_BASELINES)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_checkpoint(save_checkpoint(predictor, Path(tmp) / "model.json"))
        configs = sample_configs()
        np.testing.assert_array_equal(loaded.predict_losses(configs), predictor.predict_losses(configs))
        self.assertEqual(loaded.model.block_names(), predictor.model.block_names())

    def test_schema_hash_mismatch_rejected(self):
        predictor = TrainedPredictor(tiny_model(), STEPLAW_BASELINES)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(predictor, Path(tmp) / "model.json")
            payload = json.loads(path.read_text())
            payload["schema_hash"] = "0" * 64
            path.write_text(json.dumps(payload))
            with self.assertRaises(SchemaError):
                load_checkpoint(path)


class TrainCommandTest(SimpleTestCase):
    def write_inputs(self, tmp):
        runs = generate_synthetic_runs(OracleParams(), SynthDesign(runs_per_scale=2), seed=0)
        runs_path = write_runs(runs, Path(tmp) / "runs.jsonl")
        BaselineSet([OracleParams().chinchilla]).save(Path(tmp) / "out" / "baselines.json")
        config_path = Path(tmp) / "small.json"
        config_path.write_text(json.dumps({"train": {
            "architecture": TINY.to_dict(),
            "final": {"stage1": {"epochs": 1, "peak_lr": 1e-3, "warmup_ratio": 0.1},
                      "stage2": {"epochs": 1, "peak_lr": 5e-4, "warmup_steps": 10}},
            "curve": {"stage1": {"epochs": 1, "peak_lr": 1e-3, "warmup_ratio": 0.1},
                      "stage2": {"epochs": 1, "peak_lr": 5e-4, "warmup_steps": 10}},
        }, "gbt": {"rounds": 5}}))
        return runs, runs_path, config_path

    def test_train_predict_curve(self):
        with tempfile.TemporaryDirectory() as tmp:
            runs, runs_path, config_path = self.write_inputs(tmp)
            output = Path(tmp) / "out"
            out = io.StringIO()
            call_command("train", "--input", str(runs_path), "--output", str(output), "--config", str(config_path),
                         stdout=out)
            summary = json.loads(out.getvalue().strip().splitlines()[-1])
            self.assertTrue(summary["success"])
            self.assertTrue((output / "regressor_final.json").exists())
            self.assertTrue((output / "training_report.tsv").exists())

            call_command("predict", "--input", str(runs_path), "--output", str(output), stdout=io.StringIO())
            lines = (output / "predictions.tsv").read_text().splitlines()
            self.assertEqual(lines[0], "run_id\tloss")
            self.assertEqual(len(lines), len(runs) + 1)

            call_command("train", "--input", str(runs_path), "--output", str(output), "--config", str(config_path),
                         "--target", "curve", stdout=io.StringIO())
            call_command("curve", "--input", str(runs_path), "--output", str(output), "--points", "5",
                         stdout=io.StringIO())
            rows = (output / "curves.tsv").read_text().splitlines()
            self.assertEqual(len(rows), 5 * len(runs) + 1)

    def test_train_gbt(self):
        with tempfile.TemporaryDirectory() as tmp:
            _, runs_path, config_path = self.write_inputs(tmp)
            output = Path(tmp) / "out"
            out = io.StringIO()
            call_command("train", "--input", str(runs_path), "--output", str(output), "--config", str(config_path),
                         "--model", "gbt", stdout=out)
            summary = json.loads(out.getvalue().strip().splitlines()[-1])
            self.assertEqual(summary["data"]["trees"], 5)
            self.assertTrue((output / "gbt_forest.txt").read_text().startswith("base_score="))


ACCEPTANCE_SEED = 0


def synthetic_dataset():
    """Fixed-seed synthetic design; the GBT accuracy bound holds with little margin on this draw."""
    from ingest.filters import filter_runs

    params = OracleParams()
    runs = filter_runs(generate_synthetic_runs(params, SynthDesign(), seed=ACCEPTANCE_SEED)).kept
    dataset = split_dataset(runs, ood_threshold_N=430.0, ratio=0.8, seed=ACCEPTANCE_SEED)
    return params, dataset, BaselineSet.fit(dataset.train)


class PublishedPlanTest(SimpleTestCase):
    """The two-stage values from the original recipe, shipped as ``pipeline.published.json``."""

    def setUp(self):
        from django.conf import settings

        self.path = settings.BASE_DIR / "pipeline.published.json"

    @staticmethod
    def update_budget(plan, examples=2200):
        """Summed learning rate over both stages, a bound on how far AdamW moves any weight."""
        total = 0.0
        for stage in (plan.stage1, plan.stage2):
            steps = stage.epochs * steps_per_epoch(examples, plan.batch_size)
            warmup = warmup_steps_for(steps, stage.warmup_ratio, stage.warmup_steps)
            total += sum(lr_at(step, steps, warmup, stage.peak_lr) for step in range(steps))
        return total

    def test_resolves_to_default_plan(self):
        from cplaw.pipeline import resolve_pipeline_config

        config = resolve_pipeline_config(self.path)
        self.assertEqual(TrainPlan.from_config(config["train"], FINAL), TrainPlan())
        curve = TrainPlan.from_config(config["train"], CURVE)
        self.assertEqual((curve.stage1.epochs, curve.stage2.epochs), (10, 100))
        self.assertEqual((curve.stage1.peak_lr, curve.stage2.peak_lr), (5e-5, 1e-5))

    def test_desk_plan_moves_weights_further(self):
        from django.conf import settings

        published = self.update_budget(TrainPlan())
        desk = self.update_budget(TrainPlan.from_config(settings.CPLAW["train"], FINAL))
        self.assertLess(published, 1e-2)
        self.assertGreater(desk, 50 * published)

    def test_train_command_with_published_plan(self):
        with tempfile.TemporaryDirectory() as tmp:
            runs = generate_synthetic_runs(OracleParams(), SynthDesign(runs_per_scale=2), seed=0)
            runs_path = write_runs(runs, Path(tmp) / "runs.jsonl")
            output = Path(tmp) / "out"
            BaselineSet([OracleParams().chinchilla]).save(output / "baselines.json")
            out = io.StringIO()
            call_command("train", "--input", str(runs_path), "--output", str(output), "--config", str(self.path),
                         stdout=out)
            self.assertTrue(json.loads(out.getvalue().strip().splitlines()[-1])["success"])
            resolved = json.loads((output / "resolved_config.json").read_text())
            self.assertEqual(resolved["train"]["optimizer"]["batch_size"], 480)
            self.assertEqual(resolved["train"]["final"]["stage2"]["peak_lr"], 1e-5)


@tag("slow")
class SyntheticRegressorAcceptanceTest(SimpleTestCase):
    """Full synthetic design: ranking, accuracy, baselines, picks and interactions of the final-loss model."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        from django.conf import settings

        cls.params, cls.dataset, cls.baselines = synthetic_dataset()
        section = settings.CPLAW["train"]
        plan = replace(TrainPlan.from_config(section, FINAL), seed=ACCEPTANCE_SEED)
        cls.predictor = train(cls.dataset, plan, cls.baselines, Architecture(**section["architecture"]))

    def test_ranking_and_accuracy(self):
        from evaluation.metrics import evaluate_split

        id_metrics = evaluate_split(self.predictor, self.dataset.id_val)
        ood_metrics = evaluate_split(self.predictor, self.dataset.ood_val)
        self.assertGreaterEqual(id_metrics.spearman_rho, 0.98)
        self.assertGreaterEqual(ood_metrics.spearman_rho, 0.93)
        self.assertLessEqual(id_metrics.mae, 3 * self.params.noise_sigma)
        self.assertLessEqual(self.predictor.report.final_mse(2), self.predictor.report.final_mse(1))

    def test_against_baselines(self):
        from django.conf import settings

        from evaluation.metrics import evaluate_split
        from evaluation.predictors import ChinchillaPredictor
        from gbt.forest import GBTParams
        from gbt.predictor import train_gbt

        regressor_mae = evaluate_split(self.predictor, self.dataset.id_val).mae
        chinchilla = evaluate_split(ChinchillaPredictor(self.baselines), self.dataset.id_val)
        self.assertGreaterEqual(chinchilla.mae, 3 * regressor_mae)
        forest = train_gbt(self.dataset, GBTParams.from_config(settings.CPLAW["gbt"]), self.baselines)
        self.assertLessEqual(evaluate_split(forest, self.dataset.id_val).mae, 2 * regressor_mae)

    def test_recommendations_near_oracle_optimum(self):
        from selection.grid import SweepAxis, SweepGrid
        from selection.sweep import recommend, retarget
        from synth.generate import synthetic_config
        from synth.oracle import oracle_loss

        base = synthetic_config(268.0, 5.36, "adamw", 1e-3, 256, 0.1)
        grid = SweepGrid(base, (SweepAxis.log_spaced("peak_lr", 1e-4, 1e-2, 13),
                                SweepAxis("batch_size", (64, 128, 256, 512, 1024, 2048))))
        for N, D in ((200.0, 4.0), (300.0, 9.0), (520.0, 10.4), (1073.0, 21.46)):
            rec = recommend(self.predictor, N, D, grid)
            target = retarget(base, N, D)
            grid_best = min(oracle_loss(self.params, target.with_values(**values)) for _, values in grid.points())
            relative = (oracle_loss(self.params, rec.config) - grid_best) / grid_best
            self.assertLessEqual(relative, 0.005, (N, D))

    def test_weight_decay_crossing_matches_oracle(self):
        from selection.advisor import crossing_point, loss_profile
        from synth.generate import synthetic_config
        from synth.oracle import OraclePredictor

        N, D = 1073.0, 21.46
        lr_star, batch_star = self.params.optimum(N, D)
        base = synthetic_config(N, D, "adamw", lr_star, int(round(batch_star)), 0.1)
        values = SynthDesign().weight_decays
        oracle = OraclePredictor(self.params)

        def crossing(predictor):
            adamw = loss_profile(predictor, base, "weight_decay", values)
            lion = loss_profile(predictor, base.with_values(optimizer="lion"), "weight_decay", values)
            return crossing_point(adamw, lion)

        predicted, expected = crossing(self.predictor), crossing(oracle)
        self.assertIsNotNone(predicted)
        self.assertLessEqual(abs(predicted[1] - expected[1]), 1)


@tag("slow")
class SyntheticCurveAcceptanceTest(SimpleTestCase):
    def test_curve_points_within_tolerance(self):
        from django.conf import settings

        _, dataset, baselines = synthetic_dataset()
        section = settings.CPLAW["train"]
        plan = replace(TrainPlan.from_config(section, CURVE), seed=ACCEPTANCE_SEED)
        predictor = train(dataset, plan, baselines, Architecture(**section["architecture"]), CURVE)

        def max_error(runs):
            worst = 0.0
            for run in runs:
                points = curve_checkpoints(run, plan.curve_points)
                predicted = predictor.predict_curve(run.config, [frac for frac, _ in points])
                worst = max(worst, max(abs(loss - truth) for (_, loss), (_, truth) in zip(predicted, points)))
            return worst

        self.assertLessEqual(max_error(dataset.id_val), 0.05)
        self.assertLessEqual(max_error(dataset.ood_val), 0.1)
