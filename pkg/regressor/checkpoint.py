"""
Textual checkpoint format.

A checkpoint is a single JSON document holding the schema hash, the
architecture constants, the input scaler, every tensor in declared order
(name, shape, flat values) and the baselines the residuals were measured
against. Floats are written with ``repr`` precision, so two identical
training runs produce byte-identical files.
"""

import json
import logging
from pathlib import Path

import numpy as np

from configs.schema import SCHEMA_VERSION, schema_hash
from lawfit.baselines import BaselineSet
from utils.exceptions import SchemaError

from .features import FieldLayout, InputScaler
from .model import Architecture, RegressorModel
from .predictor import TrainedPredictor
from .training import TrainingReport

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cplaw-regressor/1"


def checkpoint_payload(predictor):
    model = predictor.model
    return {
        "format": CHECKPOINT_FORMAT,
        "schema_version": SCHEMA_VERSION,
        "schema_hash": schema_hash(),
        "target_kind": predictor.target_kind,
        "residual_target": predictor.residual_target,
        "architecture": model.architecture.to_dict(),
        "with_frac": model.layout.with_frac,
        "scaler": {"shift": list(model.scaler.shift), "scale": list(model.scaler.scale)},
        "tensors": [
            {"name": name, "shape": list(array.shape), "values": [float(x) for x in array.ravel()]}
            for name, array in model.tensors()
        ],
        "baselines": predictor.baselines.to_dict(),
        "report": predictor.report.epochs if predictor.report is not None else [],
    }


def save_checkpoint(predictor, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_payload(predictor), sort_keys=True, separators=(",", ":")) + "\n")
    logger.info(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path} is not a regressor checkpoint", module="regressor")
    if payload.get("schema_hash") != schema_hash():
        raise SchemaError(
            f"Checkpoint {path} was written for a different field table "
            f"(schema {payload.get('schema_version')!r})",
            module="regressor",
        )
    layout = FieldLayout.from_schema(with_frac=payload["with_frac"])
    scaler = InputScaler(shift=tuple(payload["scaler"]["shift"]), scale=tuple(payload["scaler"]["scale"]))
    tensors = [(tensor["name"], np.array(tensor["values"], dtype=np.float64).reshape(tensor["shape"]))
               for tensor in payload["tensors"]]
    model = RegressorModel.from_tensors(Architecture(**payload["architecture"]), layout, tensors, scaler)
    return TrainedPredictor(
        model=model,
        baselines=BaselineSet.from_dict(payload["baselines"]),
        target_kind=payload["target_kind"],
        residual_target=payload["residual_target"],
        report=TrainingReport(epochs=payload.get("report", [])),
    )
