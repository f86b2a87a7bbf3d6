"""Additive tree ensembles: parsing, evaluation, leaf identifiers and leaf boxes.

Routing rule: an example goes left iff ``x[feature] < threshold``.  Leaves are
numbered 0, 1, ... in depth-first order (left subtree first), so the identifier
of the leaf reached in each tree fits in one byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import (
    DimensionMismatch,
    FeatureIndexOutOfRange,
    LimitExceeded,
    MalformedModel,
    NonFiniteInput,
)

SUM_LOGISTIC = "sum_logistic"
AVERAGE_PROB = "average_prob"
AGGREGATIONS = (SUM_LOGISTIC, AVERAGE_PROB)

MAX_LEAVES = 256
MAX_TREES = 255


@dataclass(frozen=True, eq=False)
class LeafBox:
    """Axis-aligned box ``[lo, hi)`` per feature; bounds may be infinite."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def unbounded(cls, n_features: int) -> LeafBox:
        return cls(np.full(n_features, -np.inf), np.full(n_features, np.inf))

    @classmethod
    def unit(cls, n_features: int) -> LeafBox:
        """The closed unit cube, encoded half-open as ``[0, 1 + ulp)``."""
        return cls(np.zeros(n_features), np.full(n_features, np.nextafter(1.0, np.inf)))

    @classmethod
    def ball(cls, x, radius: float) -> LeafBox:
        """Closed L-infinity ball around ``x`` as a half-open box.

        A half-open box ``[lo, hi)`` meets this ball iff ``lo <= x + r`` and
        ``hi >= x - r``, i.e. iff its closed distance to ``x`` is at most ``r``.
        """
        x = np.asarray(x, dtype=np.float64)
        return cls(np.nextafter(x - radius, -np.inf), np.nextafter(x + radius, np.inf))

    @property
    def n_features(self) -> int:
        return len(self.lo)

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lo >= self.hi))

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all((self.lo <= x) & (x < self.hi)))

    def intersect(self, other: LeafBox) -> LeafBox:
        return LeafBox(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def distance(self, x) -> float:
        """L-infinity distance from ``x`` to the closure of the box."""
        return float(closed_distance(self.lo, self.hi, np.asarray(x, dtype=np.float64)).max(initial=0.0))

    def clamp(self, x) -> np.ndarray:
        """Closest point to ``x`` that lies strictly inside the box."""
        return clamp_into(self.lo, self.hi, np.asarray(x, dtype=np.float64))


def closed_distance(lo, hi, x):
    """Per-feature distance from ``x`` to ``[lo, hi]`` (broadcasts)."""
    return np.maximum(np.maximum(lo - x, x - hi), 0.0)


def clamp_into(lo, hi, x):
    # values at or above an open upper bound land on the largest float below it
    below_hi = np.nextafter(hi, -np.inf)
    return np.where(x < lo, lo, np.where(x >= hi, below_hi, x))


@dataclass(frozen=True, eq=False)
class Tree:
    """One binary tree stored as flat node arrays in depth-first pre-order.

    Internal nodes have ``feature >= 0``; leaves have ``feature == -1`` and a
    ``leaf_id``.  Child indices are local to the tree.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    leaf_id: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @cached_property
    def leaf_count(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    @cached_property
    def leaf_values(self) -> np.ndarray:
        """Leaf values indexed by leaf id."""
        out = np.empty(self.leaf_count)
        leaves = self.feature < 0
        out[self.leaf_id[leaves]] = self.value[leaves]
        return out

    @property
    def max_feature(self) -> int:
        return int(self.feature.max(initial=-1))

    @classmethod
    def from_dict(cls, root) -> Tree:
        feature, threshold, left, right, value, leaf_id = [], [], [], [], [], []
        n_leaves = 0
        # (node dict, parent index, is_left); pre-order with explicit stack
        stack = [(root, -1, False)]
        while stack:
            node, parent, is_left = stack.pop()
            idx = len(feature)
            if parent >= 0:
                (left if is_left else right)[parent] = idx
            if not isinstance(node, dict):
                raise MalformedModel(f"tree node must be an object, got {type(node).__name__}")
            if "value" in node:
                if set(node) - {"value", "leaf_id"}:
                    raise MalformedModel(f"leaf has unexpected keys {sorted(set(node) - {'value', 'leaf_id'})}")
                v = _number(node["value"], "leaf value")
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(v)
                leaf_id.append(n_leaves)
                n_leaves += 1
                if n_leaves > MAX_LEAVES:
                    raise LimitExceeded(f"tree has more than {MAX_LEAVES} leaves")
                continue
            missing = {"feature", "threshold", "left", "right"} - set(node)
            if missing:
                raise MalformedModel(f"split node missing {sorted(missing)}")
            f = node["feature"]
            if isinstance(f, bool) or not isinstance(f, int) or f < 0:
                raise MalformedModel(f"feature index must be a non-negative integer, got {f!r}")
            feature.append(f)
            threshold.append(_number(node["threshold"], "threshold"))
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            leaf_id.append(-1)
            # right pushed first so the left subtree is visited (and numbered) first
            stack.append((node["right"], idx, False))
            stack.append((node["left"], idx, True))
        return cls(
            np.asarray(feature, dtype=np.int32),
            np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int32),
            np.asarray(right, dtype=np.int32),
            np.asarray(value, dtype=np.float64),
            np.asarray(leaf_id, dtype=np.int32),
        )

    def to_dict(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"value": float(self.value[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "left": self.to_dict(int(self.left[node])),
            "right": self.to_dict(int(self.right[node])),
        }

    def box_arrays(self, n_features: int) -> tuple[np.ndarray, np.ndarray]:
        """Leaf boxes as ``(lo, hi)`` arrays of shape (leaf_count, n_features)."""
        lo = np.full((self.leaf_count, n_features), -np.inf)
        hi = np.full((self.leaf_count, n_features), np.inf)
        stack = [(0, np.full(n_features, -np.inf), np.full(n_features, np.inf))]
        while stack:
            node, nlo, nhi = stack.pop()
            f = self.feature[node]
            if f < 0:
                lid = self.leaf_id[node]
                lo[lid], hi[lid] = nlo, nhi
                continue
            t = self.threshold[node]
            llo, lhi = nlo, nhi.copy()
            lhi[f] = min(lhi[f], t)
            rlo, rhi = nlo.copy(), nhi
            rlo[f] = max(rlo[f], t)
            stack.append((self.left[node], llo, lhi))
            stack.append((self.right[node], rlo, rhi))
        return lo, hi


def _number(v, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MalformedModel(f"{what} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise MalformedModel(f"{what} must be finite")
    return v


@dataclass(frozen=True, eq=False)
class Ensemble:
    trees: tuple
    n_features: int
    base_score: float = 0.0
    aggregation: str = SUM_LOGISTIC

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if not 1 <= len(self.trees) <= MAX_TREES:
            raise LimitExceeded(f"ensemble must have 1..{MAX_TREES} trees, got {len(self.trees)}")
        if self.aggregation not in AGGREGATIONS:
            raise MalformedModel(f"unknown aggregation {self.aggregation!r}")
        if self.n_features < 1:
            raise MalformedModel("n_features must be positive")
        for m, t in enumerate(self.trees):
            if t.leaf_count > MAX_LEAVES:
                raise LimitExceeded(f"tree {m} has {t.leaf_count} leaves")
            if t.max_feature >= self.n_features:
                raise FeatureIndexOutOfRange(
                    f"tree {m} splits on feature {t.max_feature} but n_features={self.n_features}"
                )
            if self.aggregation == AVERAGE_PROB:
                lv = t.leaf_values
                if np.any((lv < 0) | (lv > 1)):
                    raise MalformedModel(f"tree {m}: average_prob leaf values must lie in [0, 1]")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def leaf_counts(self) -> np.ndarray:
        return np.array([t.leaf_count for t in self.trees])

    @cached_property
    def value_table(self) -> np.ndarray:
        """(M, max_leaves) table of leaf values; ``value_table[m, id]``."""
        table = np.zeros((self.n_trees, int(self.leaf_counts.max())))
        for m, t in enumerate(self.trees):
            table[m, : t.leaf_count] = t.leaf_values
        return table

    @cached_property
    def _packed(self):
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
        shift = lambda a, off: np.where(a >= 0, a + off, -1)  # noqa: E731
        return (
            np.ascontiguousarray(np.concatenate([t.feature for t in self.trees]), dtype=np.int32),
            np.ascontiguousarray(np.concatenate([t.threshold for t in self.trees])),
            np.ascontiguousarray(
                np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]), dtype=np.int32
            ),
            np.ascontiguousarray(
                np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]), dtype=np.int32
            ),
            np.ascontiguousarray(np.concatenate([t.leaf_id for t in self.trees]), dtype=np.int32),
            np.ascontiguousarray(offsets[:-1], dtype=np.int64),
        )

    def check_input(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise NonFiniteInput("input contains NaN or infinite values")
        return X

    def leaf_paths(self, X) -> np.ndarray:
        """Output configurations of all rows of ``X``: (n, M) uint8."""
        X = self.check_input(X)
        out = np.empty((X.shape[0], self.n_trees), dtype=np.uint8)
        kernels.leaf_paths(*self._packed, X, out)
        return out

    def raw_from_ocs(self, ocs) -> np.ndarray:
        """Raw outputs for output configurations (rows of ``ocs``)."""
        ocs = np.atleast_2d(np.asarray(ocs, dtype=np.intp))
        table = self.value_table
        acc = np.full(ocs.shape[0], self.base_score if self.aggregation == SUM_LOGISTIC else 0.0)
        # sequential sum in tree order: identical for single rows and batches
        for m in range(self.n_trees):
            acc += table[m, ocs[:, m]]
        if self.aggregation == AVERAGE_PROB:
            acc /= self.n_trees
        return acc

    def prob_from_raw(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        return expit(raw) if self.aggregation == SUM_LOGISTIC else raw

    def label_from_raw(self, raw):
        # equivalent to prob >= 0.5 without the rounding of the logistic
        cut = 0.0 if self.aggregation == SUM_LOGISTIC else 0.5
        return (np.asarray(raw) >= cut).astype(np.int64)

    def decision_cut(self) -> float:
        """Raw output at which the predicted label switches to 1."""
        return 0.0 if self.aggregation == SUM_LOGISTIC else 0.5

    def raw(self, X) -> np.ndarray:
        return self.raw_from_ocs(self.leaf_paths(X))

    def predict_proba(self, X) -> np.ndarray:
        return self.prob_from_raw(self.raw(X))

    def predict(self, X) -> np.ndarray:
        return self.label_from_raw(self.raw(X))

    def to_dict(self) -> dict:
        return {
            "aggregation": self.aggregation,
            "base_score": float(self.base_score),
            "n_features": int(self.n_features),
            "trees": [t.to_dict() for t in self.trees],
        }


def parse_model(content) -> Ensemble:
    """Parse model-file JSON (str, bytes, or an already-decoded dict)."""
    if isinstance(content, (bytes, bytearray)):
        content = content.decode("utf-8")
    if isinstance(content, str):
        try:
            content = json.loads(content)
        except json.JSONDecodeError as exc:
            raise MalformedModel(f"invalid JSON: {exc}") from None
    if not isinstance(content, dict):
        raise MalformedModel("model file must be a JSON object")
    missing = {"aggregation", "n_features", "trees"} - set(content)
    if missing:
        raise MalformedModel(f"model file missing {sorted(missing)}")
    n_features = content["n_features"]
    if isinstance(n_features, bool) or not isinstance(n_features, int) or n_features < 1:
        raise MalformedModel("n_features must be a positive integer")
    trees = content["trees"]
    if not isinstance(trees, list) or not trees:
        raise MalformedModel("trees must be a non-empty list")
    if len(trees) > MAX_TREES:
        raise LimitExceeded(f"ensemble has {len(trees)} trees, at most {MAX_TREES} supported")
    base = _number(content.get("base_score", 0.0), "base_score")
    return Ensemble(
        trees=tuple(Tree.from_dict(t) for t in trees),
        n_features=n_features,
        base_score=base,
        aggregation=content["aggregation"],
    )


def dump_model(e: Ensemble) -> str:
    return json.dumps(e.to_dict(), separators=(",", ":"))


def load_model(path) -> Ensemble:
    return parse_model(Path(path).read_bytes())


def save_model(e: Ensemble, path) -> None:
    Path(path).write_text(dump_model(e) + "\n", encoding="utf-8")


def evaluate(e: Ensemble, x) -> tuple[float, float, int]:
    """``(raw, prob, label)`` for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a feature vector, got shape {x.shape}")
    raw = float(e.raw(x[None, :])[0])
    return raw, float(e.prob_from_raw(raw)), int(e.label_from_raw(raw))


def leaf_path(e: Ensemble, x) -> np.ndarray:
    """Output configuration of a single feature vector (uint8, length M)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a feature vector, got shape {x.shape}")
    return e.leaf_paths(x[None, :])[0]


def leaf_boxes(tree: Tree, n_features: int) -> dict[int, LeafBox]:
    lo, hi = tree.box_arrays(n_features)
    return {i: LeafBox(lo[i], hi[i]) for i in range(tree.leaf_count)}


def bundled_model_path(name: str = "two_tree") -> Path:
    return Path(__file__).parent / "data" / f"{name}_model.json"
