"""
Squared-error gradient boosting over exact-greedy regression trees.

Features are the canonical feature-vector slots: numerical slots are used
as-is (absent slots become ``-inf`` so they sort below every present value)
and every categorical field is expanded to one indicator column per
vocabulary index, index 0 ("absent") included.

Trees are stored as flat node arrays. A node with ``feature == -1`` is a
leaf; otherwise rows with ``x[feature] <= threshold`` go left.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from configs.schema import FIELDS_BY_NAME
from regressor.features import FieldLayout
from utils.exceptions import ArgumentError, ShapeError

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass(frozen=True)
class GBTParams:
    rounds: int = 500
    max_depth: int = 6
    learning_rate: float = 0.05
    min_leaf: int = 5

    def __post_init__(self):
        if self.rounds < 0 or self.max_depth < 1 or self.min_leaf < 1 or not 0 < self.learning_rate <= 1:
            raise ArgumentError(f"Invalid boosting parameters {self}", module="gbt")

    @classmethod
    def from_config(cls, section):
        return cls(rounds=section["rounds"], max_depth=section["max_depth"],
                   learning_rate=section["learning_rate"], min_leaf=section["min_leaf"])

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FeatureMatrix:
    """Column layout of the design matrix built from feature vectors."""

    layout: FieldLayout
    columns: tuple

    @classmethod
    def from_layout(cls, layout):
        columns = []
        for name in layout.names:
            spec = FIELDS_BY_NAME[name]
            if name in layout.categorical_fields:
                columns.extend(f"{name}={index}" for index in range(spec.cardinality))
            else:
                columns.append(name)
        return cls(layout=layout, columns=tuple(columns))

    def build(self, vectors):
        numerical, present, categorical = self.layout.raw_arrays(vectors)
        numerical = np.where(present > 0, numerical, -np.inf)
        blocks = []
        numerical_index = {name: i for i, name in enumerate(self.layout.numerical_fields)}
        categorical_index = {name: i for i, name in enumerate(self.layout.categorical_fields)}
        for name in self.layout.names:
            if name in categorical_index:
                cardinality = FIELDS_BY_NAME[name].cardinality
                codes = categorical[:, categorical_index[name]]
                blocks.append((codes[:, None] == np.arange(cardinality)[None]).astype(np.float64))
            else:
                blocks.append(numerical[:, [numerical_index[name]]])
        matrix = np.hstack(blocks) if blocks else np.zeros((len(vectors), 0))
        if matrix.shape[1] != len(self.columns):
            raise ShapeError(f"Built {matrix.shape[1]} columns, layout declares {len(self.columns)}", module="gbt")
        return matrix


@dataclass
class RegressionTree:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def add_node(self, value):
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(float(value))
        return len(self.value) - 1

    @property
    def depth(self):
        def walk(node):
            if self.feature[node] == LEAF:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)

    def predict(self, matrix):
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(len(matrix), dtype=np.int64)
        rows = np.arange(len(matrix))
        while True:
            active = feature[node] != LEAF
            if not active.any():
                break
            goes_left = matrix[rows, np.where(active, feature[node], 0)] <= threshold[node]
            node = np.where(active, np.where(goes_left, left[node], right[node]), node)
        return np.asarray(self.value)[node]

    def to_dict(self):
        return asdict(self)


def best_split(matrix, orders, active_columns, member, targets, min_leaf):
    """
    Highest variance-reduction split of the rows in ``member``.

    Returns ``(gain, feature, threshold)`` or ``None``. Ties go to the lowest
    feature index, then the lowest threshold.
    """
    n = int(member.sum())
    if n < 2 * min_leaf:
        return None
    total = targets[member].sum()
    parent = total * total / n
    best = None
    for column in active_columns:
        order = orders[column][member[orders[column]]]
        values = matrix[order, column]
        sums = np.cumsum(targets[order])[:-1]
        counts = np.arange(1, n)
        valid = (values[:-1] < values[1:]) & (counts >= min_leaf) & (n - counts >= min_leaf)
        if not valid.any():
            continue
        right_sums = total - sums
        gains = np.full(n - 1, -np.inf)
        gains[valid] = (sums[valid] ** 2 / counts[valid]
                        + right_sums[valid] ** 2 / (n - counts[valid]) - parent)
        position = int(np.argmax(gains))
        gain = gains[position]
        if gain > 0 and (best is None or gain > best[0]):
            threshold = 0.5 * (values[position] + values[position + 1])
            if not np.isfinite(threshold):
                threshold = values[position]
            best = (float(gain), int(column), float(threshold))
    return best


def grow_tree(matrix, orders, active_columns, targets, max_depth, min_leaf):
    tree = RegressionTree()
    root = np.ones(len(targets), dtype=bool)
    tree.add_node(targets.mean())
    stack = [(0, root, 0)]
    while stack:
        node, member, depth = stack.pop()
        if depth >= max_depth:
            continue
        split = best_split(matrix, orders, active_columns, member, targets, min_leaf)
        if split is None:
            continue
        _, column, threshold = split
        goes_left = member & (matrix[:, column] <= threshold)
        goes_right = member & ~goes_left
        tree.feature[node] = column
        tree.threshold[node] = threshold
        tree.left[node] = tree.add_node(targets[goes_left].mean())
        tree.right[node] = tree.add_node(targets[goes_right].mean())
        stack.append((tree.right[node], goes_right, depth + 1))
        stack.append((tree.left[node], goes_left, depth + 1))
    return tree


class BoostedForest:
    def __init__(self, matrix_layout, params, base_score, trees=(), history=()):
        self.matrix_layout = matrix_layout
        self.params = params
        self.base_score = float(base_score)
        self.trees = list(trees)
        self.history = list(history)

    @property
    def learning_rate(self):
        return self.params.learning_rate

    def predict_matrix(self, matrix):
        output = np.full(len(matrix), self.base_score)
        for tree in self.trees:
            output = output + self.learning_rate * tree.predict(matrix)
        return output

    def predict(self, vectors):
        return self.predict_matrix(self.matrix_layout.build(vectors))

    def to_dict(self):
        return {
            "format": "cplaw-gbt/1",
            "with_frac": self.matrix_layout.layout.with_frac,
            "columns": list(self.matrix_layout.columns),
            "params": self.params.to_dict(),
            "base_score": self.base_score,
            "trees": [tree.to_dict() for tree in self.trees],
            "train_mse": self.history,
        }

    @classmethod
    def from_dict(cls, payload):
        matrix_layout = FeatureMatrix.from_layout(FieldLayout.from_schema(with_frac=payload["with_frac"]))
        if list(matrix_layout.columns) != payload["columns"]:
            raise ShapeError("Forest columns do not match the current field table", module="gbt")
        trees = [RegressionTree(**tree) for tree in payload["trees"]]
        return cls(matrix_layout, GBTParams(**payload["params"]), payload["base_score"], trees,
                   payload.get("train_mse", ()))

    def dump(self):
        """Human-readable tree dump: one indented line per node."""
        lines = [f"base_score={self.base_score!r} learning_rate={self.learning_rate!r} trees={len(self.trees)}"]
        columns = self.matrix_layout.columns
        for index, tree in enumerate(self.trees):
            lines.append(f"tree {index}")

            def walk(node, depth):
                indent = "  " * (depth + 1)
                if tree.feature[node] == LEAF:
                    lines.append(f"{indent}{node}: leaf={tree.value[node]!r}")
                    return
                lines.append(f"{indent}{node}: [{columns[tree.feature[node]]} <= {tree.threshold[node]!r}] "
                             f"yes={tree.left[node]} no={tree.right[node]}")
                walk(tree.left[node], depth + 1)
                walk(tree.right[node], depth + 1)

            walk(0, 0)
        return "\n".join(lines) + "\n"


def fit_gbt(vectors, targets, params=None):
    """
    Boost ``params.rounds`` trees on ``targets``.

    Each round fits a depth-limited tree to the current residuals
    ``targets - prediction`` and adds it with shrinkage ``learning_rate``.
    """
    params = params or GBTParams()
    targets = np.asarray(targets, dtype=np.float64)
    if len(vectors) == 0:
        raise ArgumentError("Cannot boost on an empty dataset", module="gbt")
    if len(vectors) != len(targets):
        raise ArgumentError(f"{len(vectors)} feature vectors but {len(targets)} targets", module="gbt")
    if len(vectors) < 2 * params.min_leaf:
        raise ArgumentError(f"Need at least {2 * params.min_leaf} examples for min_leaf={params.min_leaf}",
                            module="gbt")

    matrix_layout = FeatureMatrix.from_layout(FieldLayout.from_schema(with_frac=vectors[0].frac is not None))
    matrix = matrix_layout.build(vectors)
    orders = [np.argsort(matrix[:, column], kind="stable") for column in range(matrix.shape[1])]
    active_columns = [column for column in range(matrix.shape[1])
                      if matrix[:, column].min() < matrix[:, column].max()]

    forest = BoostedForest(matrix_layout, params, targets.mean())
    prediction = np.full(len(targets), forest.base_score)
    forest.history.append(float(np.mean((targets - prediction) ** 2)))
    for round_index in range(params.rounds):
        tree = grow_tree(matrix, orders, active_columns, targets - prediction, params.max_depth, params.min_leaf)
        forest.trees.append(tree)
        prediction = prediction + params.learning_rate * tree.predict(matrix)
        forest.history.append(float(np.mean((targets - prediction) ** 2)))
        if (round_index + 1) % 100 == 0:
            logger.info(f"round {round_index + 1}/{params.rounds}: train_mse={forest.history[-1]:.6g}")
    logger.info(f"Boosted {len(forest.trees)} trees over {len(active_columns)} informative columns")
    return forest


def predict_gbt(forest, fv):
    """Predicted residual for one ``FeatureVector``."""
    return float(forest.predict([fv])[0])
