"""
Configuration-to-loss regressor.

Every field gets its own encoder into a ``embed_dim`` space: categorical
fields through an embedding table (row 0 is "absent"), numerical fields
through a 1 -> encoder_hidden -> embed_dim GELU map that outputs zero when
the slot is absent. The field embeddings are concatenated in schema order
and passed through a GELU trunk and a linear head. Forward and backward are
written out by hand over minibatches in float64.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from utils.exceptions import ShapeError

from .features import InputScaler, encode

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass(frozen=True)
class Architecture:
    embed_dim: int = 32
    encoder_hidden: int = 64
    trunk_layers: int = 4
    trunk_width: int = 256

    def to_dict(self):
        return asdict(self)


ENCODER_BLOCKS = ("num.w1", "num.b1", "num.w2", "num.b2")
HEAD_BLOCKS = ("head.weight", "head.bias")


class RegressorModel:
    def __init__(self, architecture, layout, params, scaler=None):
        self.architecture = architecture
        self.layout = layout
        self.params = params
        self.scaler = scaler or InputScaler.identity(len(layout.numerical_fields))

    @classmethod
    def initialize(cls, architecture, layout, rng, scaler=None):
        """Fan-in uniform init for encoders and trunk; the head starts at zero."""

        def uniform(fan_in, shape):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        d_e, d_h, width = architecture.embed_dim, architecture.encoder_hidden, architecture.trunk_width
        n_num = len(layout.numerical_fields)
        params = {}
        for name, cardinality in zip(layout.categorical_fields, layout.cardinalities):
            params[f"embed.{name}"] = uniform(d_e, (cardinality, d_e))
        params["num.w1"] = uniform(1, (n_num, d_h))
        params["num.b1"] = uniform(1, (n_num, d_h))
        params["num.w2"] = uniform(d_h, (n_num, d_h, d_e))
        params["num.b2"] = uniform(d_h, (n_num, d_e))
        fan_in = len(layout.names) * d_e
        for index in range(architecture.trunk_layers):
            params[f"trunk.{index}.weight"] = uniform(fan_in, (fan_in, width))
            params[f"trunk.{index}.bias"] = uniform(fan_in, (width,))
            fan_in = width
        params["head.weight"] = np.zeros(fan_in)
        params["head.bias"] = np.zeros(1)
        return cls(architecture, layout, params, scaler)

    def encode(self, vectors):
        return encode(self.layout, self.scaler, vectors)

    @property
    def parameter_count(self):
        return int(sum(array.size for array in self.params.values()))

    def block_names(self):
        return list(self.params)

    def encoder_blocks(self):
        return [name for name in self.params if name.startswith("embed.")] + list(ENCODER_BLOCKS)

    def stage_blocks(self, stage):
        """Blocks trained in ``stage``: 1 = encoders and head, 2 = everything."""
        if stage == 1:
            return self.encoder_blocks() + list(HEAD_BLOCKS)
        return self.block_names()

    def copy_params(self):
        return {name: array.copy() for name, array in self.params.items()}

    def forward_batch(self, inputs):
        """Predicted residuals for a ``ModelInputs`` batch, plus the cache ``backward_batch`` needs."""
        params, layout = self.params, self.layout
        if inputs.numerical.shape[1] != len(layout.numerical_fields) or inputs.categorical.shape[1] != len(
            layout.categorical_fields
        ):
            raise ShapeError("Model inputs do not match the model's field layout")
        batch, d_e = len(inputs), self.architecture.embed_dim

        x = inputs.numerical
        pre1 = x[:, :, None] * params["num.w1"][None] + params["num.b1"][None]
        hidden = gelu(pre1)
        numerical_embed = (np.einsum("bjh,jhe->bje", hidden, params["num.w2"]) + params["num.b2"][None]) * (
            inputs.present[:, :, None]
        )

        fields = np.empty((batch, len(layout.names), d_e))
        fields[:, list(layout.numerical_positions)] = numerical_embed
        for column, (name, position) in enumerate(zip(layout.categorical_fields, layout.categorical_positions)):
            fields[:, position] = params[f"embed.{name}"][inputs.categorical[:, column]]

        activations = [fields.reshape(batch, -1)]
        pre_activations = []
        for index in range(self.architecture.trunk_layers):
            pre = activations[-1] @ params[f"trunk.{index}.weight"] + params[f"trunk.{index}.bias"]
            pre_activations.append(pre)
            activations.append(gelu(pre))
        output = activations[-1] @ params["head.weight"] + params["head.bias"][0]
        cache = {"inputs": inputs, "pre1": pre1, "hidden": hidden, "activations": activations,
                 "pre_activations": pre_activations}
        return output, cache

    def backward_batch(self, cache, output_grad, blocks=None):
        """Gradients of sum(output_grad * output) with respect to ``blocks`` (default: all)."""
        params, layout = self.params, self.layout
        wanted = set(blocks) if blocks is not None else set(params)
        inputs = cache["inputs"]
        activations, pre_activations = cache["activations"], cache["pre_activations"]
        grads = {}

        if "head.weight" in wanted:
            grads["head.weight"] = activations[-1].T @ output_grad
        if "head.bias" in wanted:
            grads["head.bias"] = np.array([output_grad.sum()])
        needs_trunk = any(name.startswith("trunk.") for name in wanted)
        if not needs_trunk and not any(name in wanted for name in self.encoder_blocks()):
            return grads

        upstream = output_grad[:, None] * params["head.weight"][None]
        for index in reversed(range(self.architecture.trunk_layers)):
            delta = upstream * gelu_grad(pre_activations[index])
            if f"trunk.{index}.weight" in wanted:
                grads[f"trunk.{index}.weight"] = activations[index].T @ delta
            if f"trunk.{index}.bias" in wanted:
                grads[f"trunk.{index}.bias"] = delta.sum(axis=0)
            upstream = delta @ params[f"trunk.{index}.weight"].T

        batch = len(inputs)
        field_grads = upstream.reshape(batch, len(layout.names), self.architecture.embed_dim)
        for column, (name, position) in enumerate(zip(layout.categorical_fields, layout.categorical_positions)):
            block = f"embed.{name}"
            if block in wanted:
                grad = np.zeros_like(params[block])
                np.add.at(grad, inputs.categorical[:, column], field_grads[:, position])
                grads[block] = grad

        if any(name in wanted for name in ENCODER_BLOCKS):
            embed_grad = field_grads[:, list(layout.numerical_positions)] * inputs.present[:, :, None]
            hidden_grad = np.einsum("bje,jhe->bjh", embed_grad, params["num.w2"])
            pre1_grad = hidden_grad * gelu_grad(cache["pre1"])
            candidates = {
                "num.w2": lambda: np.einsum("bjh,bje->jhe", cache["hidden"], embed_grad),
                "num.b2": lambda: embed_grad.sum(axis=0),
                "num.w1": lambda: np.einsum("bjh,bj->jh", pre1_grad, inputs.numerical),
                "num.b1": lambda: pre1_grad.sum(axis=0),
            }
            for name, compute in candidates.items():
                if name in wanted:
                    grads[name] = compute()
        return grads

    def predict(self, inputs):
        output, _ = self.forward_batch(inputs)
        return output

    def mse_gradients(self, inputs, targets, blocks=None):
        """(mean squared error, gradients of it) over a batch."""
        output, cache = self.forward_batch(inputs)
        error = output - targets
        loss = float(np.mean(error**2))
        grads = self.backward_batch(cache, 2.0 * error / len(targets), blocks)
        return loss, grads

    def tensors(self):
        """(name, array) pairs in declared order."""
        return list(self.params.items())

    @classmethod
    def from_tensors(cls, architecture, layout, tensors, scaler=None):
        return cls(architecture, layout, dict(tensors), scaler)


def forward(model, fv):
    """Predicted residual for one ``FeatureVector``."""
    return float(model.predict(model.encode([fv]))[0])


def backward(model, fv, target):
    """Gradients of (forward(model, fv) - target) ** 2 for every parameter block."""
    output, cache = model.forward_batch(model.encode([fv]))
    return model.backward_batch(cache, 2.0 * (output - target))
