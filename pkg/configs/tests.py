import dataclasses
import io
import json
import math
import tempfile
from pathlib import Path

from django.core.management import call_command
from django.test import SimpleTestCase

from utils.exceptions import SchemaError
from utils.testing import run_config as steplaw_config

from .schema import (
    FIELD_SPECS,
    FIELDS_BY_NAME,
    NUMERICAL,
    FeatureVector,
    RunConfig,
    canonicalize,
    decanonicalize,
    group_key,
    nd_key,
)
from .serializers import parse_config

# Scale factors of the published field table, typed in independently.
PUBLISHED_SCALE_FACTORS = {
    "model_size_N": 1e-2,
    "num_layers": 1.0,
    "num_heads": 1.0,
    "hidden_dim": 1e-2,
    "data_size_D": 1.0,
    "total_steps": 1e-3,
    "frac": 1.0,
    "peak_lr": 1e4,
    "min_lr": 1e4,
    "min_lr_ratio": 200.0,
    "weight_decay": 1e2,
    "batch_size": 1e-1,
    "warmup_ratio": 1e-2,
    "max_grad_norm": 1.0,
    "muon_adam_lr": 1e4,
    "soap_block_size": 2e-2,
}
PUBLISHED_CATEGORICALS = ("source", "optimizer", "lr_schedule", "betas", "epsilon", "kron_precond_lr")


def assert_configs_close(test, left, right, rel=1e-12):
    for spec in dataclasses.fields(RunConfig):
        a, b = getattr(left, spec.name), getattr(right, spec.name)
        if isinstance(a, float) or isinstance(b, float):
            test.assertTrue(math.isclose(a, b, rel_tol=rel), f"{spec.name}: {a!r} != {b!r}")
        elif isinstance(a, dict):
            test.assertEqual(a.keys(), b.keys())
            for key in a:
                test.assertTrue(math.isclose(a[key], b[key], rel_tol=rel), key)
        else:
            test.assertEqual(a, b, spec.name)


class FieldTableTest(SimpleTestCase):
    def test_published_scale_factors_are_present(self):
        for name, factor in PUBLISHED_SCALE_FACTORS.items():
            self.assertIn(name, FIELDS_BY_NAME)
            self.assertEqual(FIELDS_BY_NAME[name].kind, NUMERICAL)
            self.assertEqual(FIELDS_BY_NAME[name].scale_factor, factor, name)

    def test_published_categoricals_are_categorical(self):
        for name in PUBLISHED_CATEGORICALS:
            self.assertEqual(FIELDS_BY_NAME[name].kind, "categorical")
            self.assertIsNone(FIELDS_BY_NAME[name].scale_factor)

    def test_every_config_field_has_exactly_one_spec(self):
        for config_field in dataclasses.fields(RunConfig):
            owners = [spec.name for spec in FIELD_SPECS if config_field.name in spec.config_fields]
            if config_field.name == "optimizer_extras":
                self.assertGreaterEqual(len(owners), 1)
            else:
                self.assertEqual(len(owners), 1, f"{config_field.name}: {owners}")


class RunConfigTest(SimpleTestCase):
    def test_min_lr_ratio_recomputed_when_absent(self):
        config = steplaw_config()
        self.assertAlmostEqual(config.min_lr_ratio, 1e-05 / 0.000977, places=15)

    def test_min_lr_recomputed_from_ratio(self):
        config = steplaw_config(min_lr=None, min_lr_ratio=0.1)
        self.assertAlmostEqual(config.min_lr, 0.0000977, places=15)

    def test_inconsistent_min_lr_ratio_rejected(self):
        with self.assertRaises(SchemaError) as ctx:
            steplaw_config(min_lr_ratio=0.5)
        self.assertEqual(ctx.exception.field, "min_lr_ratio")

    def test_non_positive_sizes_rejected(self):
        for name in ("model_size_N", "data_size_D", "total_steps", "peak_lr"):
            with self.assertRaises(SchemaError):
                steplaw_config(**{name: 0})
        with self.assertRaises(SchemaError):
            steplaw_config(batch_size=0)

    def test_extra_for_other_optimizer_rejected(self):
        with self.assertRaises(SchemaError) as ctx:
            steplaw_config(optimizer_extras={"muon_adam_lr": 0.003})
        self.assertEqual(ctx.exception.field, "muon_adam_lr")

    def test_warmup_normalizes_to_ratio(self):
        self.assertAlmostEqual(steplaw_config().warmup_ratio, 2000 / 127155)
        self.assertEqual(steplaw_config(warmup=0.05, warmup_is_ratio=True).warmup_ratio, 0.05)

    def test_with_values_keeps_token_budget_and_lr_ratio(self):
        base = steplaw_config()
        changed = base.with_values(batch_size=480, peak_lr=0.002)
        self.assertEqual(changed.total_steps, 254310)
        self.assertAlmostEqual(changed.min_lr_ratio, base.min_lr_ratio)
        self.assertAlmostEqual(changed.min_lr, 0.002 * base.min_lr_ratio)

    def test_grouping_keys_round_sizes(self):
        config = steplaw_config(model_size_N=268.04, data_size_D=24.96)
        self.assertEqual(nd_key(config), (268.0, 25.0))
        self.assertEqual(group_key(config), ("adamw", 268.0, 25.0))


class CanonicalizeTest(SimpleTestCase):
    def test_peak_lr_scaled(self):
        slots = canonicalize(steplaw_config()).as_dict()
        self.assertAlmostEqual(slots["peak_lr"], 9.77, places=12)

    def test_weight_decay_scaled(self):
        self.assertAlmostEqual(canonicalize(steplaw_config()).as_dict()["weight_decay"], 10.0, places=12)

    def test_epsilon_becomes_negative_log_category(self):
        spec = FIELDS_BY_NAME["epsilon"]
        index = canonicalize(steplaw_config()).as_dict()["epsilon"]
        self.assertEqual(spec.decode_category(index), "8")

    def test_identity_scaling_on_data_size(self):
        slots = canonicalize(steplaw_config(data_size_D=26.8)).as_dict()
        self.assertEqual(slots["data_size_D"], 26.8)

    def test_betas_are_categorical(self):
        spec = FIELDS_BY_NAME["betas"]
        index = canonicalize(steplaw_config()).as_dict()["betas"]
        self.assertEqual(spec.decode_category(index), "0.9/0.95")

    def test_field_order_fixed(self):
        fv = canonicalize(steplaw_config())
        self.assertEqual(fv.names, tuple(spec.name for spec in FIELD_SPECS))
        self.assertEqual(canonicalize(steplaw_config(), frac=0.39).names[-1], "frac")

    def test_serialization_is_deterministic(self):
        self.assertEqual(canonicalize(steplaw_config()).serialize(), canonicalize(steplaw_config()).serialize())

    def test_unknown_categorical_names_field(self):
        config = steplaw_config(lr_schedule="cosine")
        config = dataclasses.replace(config, lr_schedule="triangular")
        with self.assertRaises(SchemaError) as ctx:
            canonicalize(config)
        self.assertEqual(ctx.exception.field, "lr_schedule")

    def test_non_power_of_ten_epsilon_rejected(self):
        with self.assertRaises(SchemaError):
            canonicalize(steplaw_config(epsilon=3e-8))


class DecanonicalizeTest(SimpleTestCase):
    def test_round_trip(self):
        config = steplaw_config()
        assert_configs_close(self, decanonicalize(canonicalize(config)), config)

    def test_round_trip_with_extras_and_ratio_warmup(self):
        config = RunConfig(
            source="marin", model_size_N=134.0, data_size_D=26.8, total_steps=20000, optimizer="soap",
            peak_lr=0.0016, batch_size=1280, warmup=0.01, warmup_is_ratio=True, min_lr_ratio=0.0,
            optimizer_extras={"soap_block_size": 256, "precondition_frequency": 10.0},
        )
        assert_configs_close(self, decanonicalize(canonicalize(config)), config)

    def test_peak_lr_slot_inverts(self):
        fv = canonicalize(steplaw_config())
        self.assertTrue(math.isclose(decanonicalize(fv).peak_lr, 0.000977, rel_tol=1e-12))

    def test_weight_decay_slot_inverts(self):
        fv = canonicalize(steplaw_config())
        slots = tuple((name, 10.0 if name == "weight_decay" else value) for name, value in fv.slots)
        self.assertTrue(math.isclose(decanonicalize(FeatureVector(slots=slots)).weight_decay, 0.1, rel_tol=1e-12))

    def test_out_of_vocabulary_index_rejected(self):
        fv = canonicalize(steplaw_config())
        slots = tuple((name, 999 if name == "optimizer" else value) for name, value in fv.slots)
        with self.assertRaises(SchemaError) as ctx:
            decanonicalize(FeatureVector(slots=slots))
        self.assertEqual(ctx.exception.field, "optimizer")


class RunConfigSerializerTest(SimpleTestCase):
    def test_parses_log_payload(self):
        config = parse_config({"source": "steplaw", "model_size_N": 268, "data_size_D": 25,
                               "total_steps": 127155, "optimizer": "adamw", "peak_lr": 0.000977,
                               "batch_size": 960})
        self.assertEqual(config.batch_size, 960)

    def test_missing_required_field_names_field(self):
        with self.assertRaises(SchemaError) as ctx:
            parse_config({"source": "steplaw", "model_size_N": 268})
        self.assertIn(ctx.exception.field, {"data_size_D", "total_steps", "optimizer", "peak_lr", "batch_size"})

    def test_unknown_optimizer_names_field(self):
        with self.assertRaises(SchemaError) as ctx:
            parse_config({"source": "steplaw", "model_size_N": 268, "data_size_D": 25, "total_steps": 10,
                          "optimizer": "adagrad", "peak_lr": 0.001, "batch_size": 8})
        self.assertEqual(ctx.exception.field, "optimizer")


class SchemaCommandTest(SimpleTestCase):
    def test_dump_writes_table(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = io.StringIO()
            call_command("schema", "dump", "--output", tmp, stdout=out)
            summary = json.loads(out.getvalue().strip().splitlines()[-1])
            self.assertTrue(summary["success"])
            dumped = json.loads((Path(tmp) / "schema.json").read_text())
            self.assertEqual(dumped["fields"][0]["name"], "source")
            self.assertEqual(dumped["fields"][-1]["name"], "frac")
            self.assertEqual(summary["data"]["hash"], dumped["hash"])
