"""
Configuration schema for pretraining runs.

``RunConfig`` is the typed, validated configuration of one run,
``FIELD_SPECS`` is the fixed field table (kind, scale factor, vocabulary)
and ``canonicalize``/``decanonicalize`` convert between a config and the
ordered ``FeatureVector`` the predictors consume.

Categorical slots hold vocabulary indices; index 0 is reserved for
"absent" so optional categorical fields always encode.
"""

import dataclasses
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

from utils.exceptions import SchemaError

SCHEMA_VERSION = "1"

CATEGORICAL = "categorical"
NUMERICAL = "numerical"
ABSENT = "<none>"

EXTRA_SLOTS = 2
EXTRA_BUCKETS = 32

# Optimizer-specific extras known to the schema, keyed by owning optimizer.
KNOWN_EXTRAS = {
    "muon_adam_lr": "muon",
    "soap_block_size": "soap",
    "kron_precond_lr": "kron",
}

SOURCES = ("steplaw", "marin", "synthetic")
OPTIMIZERS = (
    "adamw", "adam", "nadam", "muon", "soap", "lion", "mars",
    "kron", "scion", "sophia", "cautious", "adopt", "sgd",
)
LR_SCHEDULES = ("cosine", "linear", "constant", "wsd", "inverse_sqrt", "exponential")
BETA1_VALUES = (0.8, 0.85, 0.9, 0.95, 0.98)
BETA2_VALUES = (0.9, 0.95, 0.98, 0.99, 0.995, 0.999)
BETA_PAIRS = tuple(f"{b1!r}/{b2!r}" for b1, b2 in itertools.product(BETA1_VALUES, BETA2_VALUES))
EPSILON_EXPONENTS = tuple(str(k) for k in range(1, 21))
KRON_PRECOND_LRS = ("0.05", "0.1", "0.2", "0.3", "0.5", "1.0")
WARMUP_UNITS = ("steps", "ratio")
EXTRA_KEY_BUCKETS = tuple(f"bucket_{i}" for i in range(EXTRA_BUCKETS))


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    scale_factor: float | None = None
    vocabulary: tuple = ()
    config_fields: tuple = ()
    description: str = ""

    def encode_category(self, value):
        if value is None:
            return 0
        try:
            return self.vocabulary.index(value) + 1
        except ValueError:
            raise SchemaError(
                f"Unknown value {value!r} for categorical field '{self.name}'", field=self.name
            ) from None

    def decode_category(self, index):
        if index == 0:
            return None
        if not isinstance(index, int) or not 0 < index <= len(self.vocabulary):
            raise SchemaError(
                f"Index {index!r} is outside the vocabulary of field '{self.name}'", field=self.name
            )
        return self.vocabulary[index - 1]

    @property
    def cardinality(self):
        return len(self.vocabulary) + 1


def _numerical(name, factor, *config_fields, description=""):
    return FieldSpec(name, NUMERICAL, factor, (), config_fields or (name,), description)


def _categorical(name, vocabulary, *config_fields, description=""):
    return FieldSpec(name, CATEGORICAL, None, tuple(vocabulary), config_fields or (name,), description)


FIELD_SPECS = (
    _categorical("source", SOURCES, description="Open-source project the run comes from"),
    _numerical("model_size_N", 1e-2, description="Non-embedding parameters, millions"),
    _numerical("num_layers", 1.0),
    _numerical("num_heads", 1.0),
    _numerical("hidden_dim", 1e-2),
    _numerical("data_size_D", 1.0, description="Training tokens, billions"),
    _numerical("total_steps", 1e-3),
    _categorical("optimizer", OPTIMIZERS),
    _numerical("peak_lr", 1e4),
    _categorical("lr_schedule", LR_SCHEDULES),
    _numerical("min_lr", 1e4, description="Final learning rate after decay"),
    _numerical("min_lr_ratio", 200.0),
    _numerical("weight_decay", 1e2),
    _numerical("batch_size", 1e-1, description="Sequences per step"),
    _numerical("warmup_ratio", 1e-2, "warmup", description="Warmup as a ratio of total steps"),
    _categorical("warmup_unit", WARMUP_UNITS, "warmup_is_ratio", description="Unit the warmup was logged in"),
    _numerical("max_grad_norm", 1.0, description="Gradient clipping threshold"),
    _categorical("betas", BETA_PAIRS, "beta1", "beta2", description="(beta1, beta2) momentum pair"),
    _categorical("epsilon", EPSILON_EXPONENTS, description="-log10 of the stability constant"),
    _numerical("muon_adam_lr", 1e4, "optimizer_extras", description="Adam lr used inside Muon"),
    _numerical("soap_block_size", 2e-2, "optimizer_extras"),
    _categorical("kron_precond_lr", KRON_PRECOND_LRS, "optimizer_extras"),
    _categorical("extra_key_0", EXTRA_KEY_BUCKETS, "optimizer_extras", description="Hashed unknown extra key"),
    _numerical("extra_value_0", 1.0, "optimizer_extras"),
    _categorical("extra_key_1", EXTRA_KEY_BUCKETS, "optimizer_extras", description="Hashed unknown extra key"),
    _numerical("extra_value_1", 1.0, "optimizer_extras"),
)

FRAC_SPEC = _numerical("frac", 1.0, description="Ratio of total training steps completed")

FIELDS_BY_NAME = {spec.name: spec for spec in FIELD_SPECS + (FRAC_SPEC,)}

INT_FIELDS = ("num_layers", "num_heads", "hidden_dim", "total_steps", "batch_size")


def schema_table(with_frac=True):
    """Rows of the field table in canonical order, for ``schema dump``."""
    specs = FIELD_SPECS + ((FRAC_SPEC,) if with_frac else ())
    return [
        {
            "position": position,
            "name": spec.name,
            "kind": spec.kind,
            "scale_factor": spec.scale_factor,
            "vocabulary": list(spec.vocabulary),
            "config_fields": list(spec.config_fields),
        }
        for position, spec in enumerate(specs)
    ]


def schema_hash():
    payload = json.dumps({"version": SCHEMA_VERSION, "fields": schema_table()}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def extra_bucket(key):
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return EXTRA_KEY_BUCKETS[int.from_bytes(digest[:4], "big") % EXTRA_BUCKETS]


@dataclass(frozen=True)
class RunConfig:
    source: str
    model_size_N: float
    data_size_D: float
    total_steps: int
    optimizer: str
    peak_lr: float
    batch_size: int
    num_layers: int | None = None
    num_heads: int | None = None
    hidden_dim: int | None = None
    lr_schedule: str | None = None
    min_lr: float | None = None
    min_lr_ratio: float | None = None
    weight_decay: float | None = None
    warmup: float | None = None
    warmup_is_ratio: bool = False
    max_grad_norm: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    epsilon: float | None = None
    optimizer_extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("model_size_N", "data_size_D", "total_steps", "peak_lr"):
            value = getattr(self, name)
            if value is None or not math.isfinite(value) or value <= 0:
                raise SchemaError(f"Field '{name}' must be a finite positive number, got {value!r}", field=name)
        if self.batch_size is None or self.batch_size < 1:
            raise SchemaError(f"Field 'batch_size' must be >= 1, got {self.batch_size!r}", field="batch_size")
        if self.epsilon is not None and self.epsilon <= 0:
            raise SchemaError("Field 'epsilon' must be positive", field="epsilon")
        if self.warmup is not None:
            if self.warmup < 0 or (self.warmup_is_ratio and self.warmup > 1):
                raise SchemaError(f"Field 'warmup' out of range: {self.warmup!r}", field="warmup")
        if (self.beta1 is None) != (self.beta2 is None):
            raise SchemaError("Fields 'beta1' and 'beta2' must be given together", field="betas")

        if self.min_lr is not None and self.min_lr_ratio is None:
            object.__setattr__(self, "min_lr_ratio", self.min_lr / self.peak_lr)
        elif self.min_lr is None and self.min_lr_ratio is not None:
            object.__setattr__(self, "min_lr", self.min_lr_ratio * self.peak_lr)
        elif self.min_lr is not None and not math.isclose(
            self.min_lr_ratio, self.min_lr / self.peak_lr, rel_tol=1e-9, abs_tol=1e-15
        ):
            raise SchemaError(
                f"min_lr_ratio {self.min_lr_ratio!r} disagrees with min_lr / peak_lr", field="min_lr_ratio"
            )
        if self.min_lr is not None and self.min_lr > self.peak_lr:
            raise SchemaError("min_lr must not exceed peak_lr", field="min_lr")

        for key in self.optimizer_extras:
            owner = KNOWN_EXTRAS.get(key)
            if owner is not None and owner != self.optimizer:
                raise SchemaError(
                    f"Extra '{key}' belongs to optimizer '{owner}', not '{self.optimizer}'", field=key
                )

    @property
    def warmup_ratio(self):
        if self.warmup is None:
            return None
        return self.warmup if self.warmup_is_ratio else self.warmup / self.total_steps

    @property
    def unknown_extras(self):
        return sorted(key for key in self.optimizer_extras if key not in KNOWN_EXTRAS)

    def to_dict(self):
        return dataclasses.asdict(self)

    def with_values(self, **changes):
        """Return a copy with ``changes`` applied.

        Changing ``batch_size`` rescales ``total_steps`` so the token budget
        stays fixed; changing ``peak_lr`` keeps ``min_lr_ratio`` and
        recomputes ``min_lr``. Explicit values always win.
        """
        values = self.to_dict()
        values.update(changes)
        if "batch_size" in changes and "total_steps" not in changes:
            values["total_steps"] = max(1, round(self.total_steps * self.batch_size / changes["batch_size"]))
        if "min_lr_ratio" not in changes and "min_lr" in changes:
            values["min_lr_ratio"] = None
        elif "min_lr" not in changes and ("peak_lr" in changes or "min_lr_ratio" in changes):
            values["min_lr"] = None
        return RunConfig(**values)


def nd_key(config):
    """(N, D) rounded to 0.1M / 0.1B, the grouping key for frontiers and filters."""
    return (round(config.model_size_N, 1), round(config.data_size_D, 1))


def group_key(config):
    return (config.optimizer,) + nd_key(config)


@dataclass(frozen=True)
class FeatureVector:
    """Ordered (field name, slot) pairs; ``frac`` is set for curve-point targets only."""

    slots: tuple
    frac: float | None = None
    extra_keys: tuple = ()
    schema_version: str = SCHEMA_VERSION

    @property
    def names(self):
        names = tuple(name for name, _ in self.slots)
        return names + (("frac",) if self.frac is not None else ())

    @property
    def values(self):
        values = tuple(value for _, value in self.slots)
        return values + ((self.frac,) if self.frac is not None else ())

    def as_dict(self):
        return dict(zip(self.names, self.values))

    def with_frac(self, frac):
        if not 0 < frac <= 1:
            raise SchemaError(f"frac must lie in (0, 1], got {frac!r}", field="frac")
        return dataclasses.replace(self, frac=float(frac))

    def serialize(self):
        return json.dumps(
            {"version": self.schema_version, "slots": [list(slot) for slot in self.slots],
             "frac": self.frac, "extra_keys": list(self.extra_keys)},
            separators=(",", ":"),
        )


def _scale(spec, value):
    return None if value is None else float(value) * spec.scale_factor


def _unscale(spec, slot):
    return None if slot is None else slot / spec.scale_factor


def _epsilon_token(epsilon):
    if epsilon is None:
        return None
    exponent = -math.log10(epsilon)
    nearest = round(exponent)
    if not math.isclose(exponent, nearest, abs_tol=1e-9):
        raise SchemaError(f"epsilon {epsilon!r} is not a power of ten", field="epsilon")
    return str(nearest)


def _float_token(value):
    return None if value is None else repr(float(value))


def canonicalize(config, frac=None):
    """Encode ``config`` into the canonical ``FeatureVector``."""
    extras = config.optimizer_extras
    unknown = config.unknown_extras
    if len(unknown) > EXTRA_SLOTS:
        raise SchemaError(
            f"At most {EXTRA_SLOTS} unknown optimizer extras are supported, got {unknown}",
            field="optimizer_extras",
        )
    betas = None if config.beta1 is None else f"{float(config.beta1)!r}/{float(config.beta2)!r}"
    categorical = {
        "source": config.source,
        "optimizer": config.optimizer,
        "lr_schedule": config.lr_schedule,
        "warmup_unit": None if config.warmup is None else ("ratio" if config.warmup_is_ratio else "steps"),
        "betas": betas,
        "epsilon": _epsilon_token(config.epsilon),
        "kron_precond_lr": _float_token(extras.get("kron_precond_lr")),
    }
    numerical = {
        "warmup_ratio": config.warmup_ratio,
        "muon_adam_lr": extras.get("muon_adam_lr"),
        "soap_block_size": extras.get("soap_block_size"),
    }
    for position in range(EXTRA_SLOTS):
        key = unknown[position] if position < len(unknown) else None
        categorical[f"extra_key_{position}"] = None if key is None else extra_bucket(key)
        numerical[f"extra_value_{position}"] = None if key is None else float(extras[key])

    slots = []
    for spec in FIELD_SPECS:
        if spec.kind == CATEGORICAL:
            raw = categorical[spec.name] if spec.name in categorical else getattr(config, spec.name)
            if raw is None and spec.name in ("source", "optimizer"):
                raise SchemaError(f"Missing required field '{spec.name}'", field=spec.name)
            slots.append((spec.name, spec.encode_category(raw)))
        else:
            raw = numerical[spec.name] if spec.name in numerical else getattr(config, spec.name)
            slots.append((spec.name, _scale(spec, raw)))
    vector = FeatureVector(slots=tuple(slots), extra_keys=tuple(unknown))
    return vector if frac is None else vector.with_frac(frac)


def decanonicalize(fv):
    """Invert ``canonicalize``; numerical fields round-trip to float precision."""
    if fv.schema_version != SCHEMA_VERSION:
        raise SchemaError(f"Feature vector schema {fv.schema_version!r} != {SCHEMA_VERSION!r}")
    expected = tuple(spec.name for spec in FIELD_SPECS)
    names = tuple(name for name, _ in fv.slots)
    if names != expected:
        raise SchemaError("Feature vector fields do not match the schema field order")
    decoded = {}
    for spec, (_, slot) in zip(FIELD_SPECS, fv.slots):
        if spec.kind == CATEGORICAL:
            decoded[spec.name] = spec.decode_category(slot)
        else:
            decoded[spec.name] = _unscale(spec, slot)

    values = {
        name: decoded[name]
        for name in ("source", "model_size_N", "data_size_D", "total_steps", "optimizer", "peak_lr",
                     "batch_size", "num_layers", "num_heads", "hidden_dim", "lr_schedule", "min_lr",
                     "min_lr_ratio", "weight_decay", "max_grad_norm")
    }
    for name in INT_FIELDS:
        if values[name] is not None:
            values[name] = int(round(values[name]))

    ratio = decoded["warmup_ratio"]
    unit = decoded["warmup_unit"]
    values["warmup_is_ratio"] = unit == "ratio"
    if ratio is None:
        values["warmup"] = None
    else:
        values["warmup"] = ratio if unit == "ratio" else ratio * values["total_steps"]

    if decoded["betas"] is not None:
        beta1, beta2 = decoded["betas"].split("/")
        values["beta1"], values["beta2"] = float(beta1), float(beta2)
    if decoded["epsilon"] is not None:
        values["epsilon"] = float(f"1e-{decoded['epsilon']}")

    extras = {}
    for name in ("muon_adam_lr", "soap_block_size"):
        if decoded[name] is not None:
            extras[name] = decoded[name]
    if decoded["kron_precond_lr"] is not None:
        extras["kron_precond_lr"] = float(decoded["kron_precond_lr"])
    for position, key in enumerate(fv.extra_keys):
        if decoded[f"extra_key_{position}"] != extra_bucket(key):
            raise SchemaError(f"Extra key '{key}' does not match its hashed slot", field=f"extra_key_{position}")
        extras[key] = decoded[f"extra_value_{position}"]
    values["optimizer_extras"] = extras
    return RunConfig(**values)
