from dataclasses import dataclass

import numpy as np

from configs.schema import CATEGORICAL, FIELD_SPECS, FRAC_SPEC
from utils.exceptions import ShapeError


@dataclass(frozen=True)
class ModelInputs:
    """A batch of feature vectors split by field kind.

    ``numerical`` holds the scaled, standardized slots (absent slots are 0) and
    ``present`` marks which numerical slots were set.
    """

    numerical: np.ndarray
    present: np.ndarray
    categorical: np.ndarray

    def __len__(self):
        return self.numerical.shape[0]

    def take(self, index):
        return ModelInputs(self.numerical[index], self.present[index], self.categorical[index])


@dataclass(frozen=True)
class FieldLayout:
    """Field order and kinds a model was built for."""

    names: tuple
    categorical_fields: tuple
    numerical_fields: tuple
    cardinalities: tuple

    @classmethod
    def from_schema(cls, with_frac=False):
        specs = FIELD_SPECS + ((FRAC_SPEC,) if with_frac else ())
        return cls(
            names=tuple(spec.name for spec in specs),
            categorical_fields=tuple(spec.name for spec in specs if spec.kind == CATEGORICAL),
            numerical_fields=tuple(spec.name for spec in specs if spec.kind != CATEGORICAL),
            cardinalities=tuple(spec.cardinality for spec in specs if spec.kind == CATEGORICAL),
        )

    @property
    def with_frac(self):
        return self.names[-1] == FRAC_SPEC.name

    @property
    def categorical_positions(self):
        return tuple(self.names.index(name) for name in self.categorical_fields)

    @property
    def numerical_positions(self):
        return tuple(self.names.index(name) for name in self.numerical_fields)

    def raw_arrays(self, vectors):
        """(numerical slots, presence mask, categorical indices) for a list of ``FeatureVector``."""
        numerical = np.zeros((len(vectors), len(self.numerical_fields)), dtype=np.float64)
        present = np.zeros_like(numerical)
        categorical = np.zeros((len(vectors), len(self.categorical_fields)), dtype=np.int64)
        numerical_columns = {name: column for column, name in enumerate(self.numerical_fields)}
        categorical_columns = {name: column for column, name in enumerate(self.categorical_fields)}
        for row, fv in enumerate(vectors):
            if fv.names != self.names:
                raise ShapeError(
                    f"Feature vector fields {len(fv.names)} do not match the model layout ({len(self.names)} fields)"
                )
            for name, value in zip(fv.names, fv.values):
                if name in categorical_columns:
                    categorical[row, categorical_columns[name]] = value
                elif value is not None:
                    numerical[row, numerical_columns[name]] = value
                    present[row, numerical_columns[name]] = 1.0
        return numerical, present, categorical


@dataclass(frozen=True)
class InputScaler:
    """Per-field standardization of numerical slots, fitted on present training values."""

    shift: tuple
    scale: tuple

    @classmethod
    def fit(cls, numerical, present):
        counts = present.sum(axis=0)
        safe = np.maximum(counts, 1.0)
        mean = (numerical * present).sum(axis=0) / safe
        variance = (((numerical - mean) * present) ** 2).sum(axis=0) / safe
        std = np.sqrt(variance)
        std[std < 1e-12] = 1.0
        return cls(shift=tuple(float(x) for x in mean), scale=tuple(float(x) for x in std))

    @classmethod
    def identity(cls, width):
        return cls(shift=(0.0,) * width, scale=(1.0,) * width)

    def transform(self, numerical, present):
        return (numerical - np.asarray(self.shift)) / np.asarray(self.scale) * present


def encode(layout, scaler, vectors):
    numerical, present, categorical = layout.raw_arrays(vectors)
    return ModelInputs(scaler.transform(numerical, present), present, categorical)
