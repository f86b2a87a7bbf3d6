"""Adversarial-example detectors.  Every score is oriented so higher means more suspicious.

``ocscore``
    Hamming distance from the example's output configuration to the closest
    reference configuration with the same predicted label.
``ambig``
    ``1 - |2p - 1|`` for predicted probability ``p``.
``mlloo``
    Population standard deviation of the leave-one-feature-out changes
    ``p(x) - p(x with feature k set to 0)``.
``iforest``
    Isolation-forest anomaly score ``2 ** (-E[h(x)] / c(psi))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from .errors import DegenerateData
from .model import Ensemble, evaluate, leaf_path
from .ocspace import ReferenceSet, batch_oc_scores, oc_score_simd

DETECTORS = ("ocscore", "ambig", "mlloo", "iforest")


@dataclass(frozen=True)
class DetectorScore:
    name: str
    score: float


def score_ocscore(e: Ensemble, r: ReferenceSet, x, wide: bool = True) -> DetectorScore:
    label = evaluate(e, x)[2]
    return DetectorScore("ocscore", float(oc_score_simd(r, leaf_path(e, x), label, wide)))


def score_ambiguity(e: Ensemble, x) -> DetectorScore:
    p = evaluate(e, x)[1]
    return DetectorScore("ambig", float(ambiguity(p)))


def score_mlloo(e: Ensemble, x) -> DetectorScore:
    x = np.asarray(x, dtype=np.float64)
    return DetectorScore("mlloo", float(mlloo_batch(e, x[None, :])[0]))


def ambiguity(p):
    return 1.0 - np.abs(2.0 * np.asarray(p) - 1.0)


def ocscore_batch(e: Ensemble, r: ReferenceSet, X, wide: bool = True) -> np.ndarray:
    ocs = e.leaf_paths(X)
    labels = e.label_from_raw(e.raw_from_ocs(ocs))
    return batch_oc_scores(r, ocs, labels, wide).astype(np.float64)


def ambiguity_batch(e: Ensemble, X) -> np.ndarray:
    return ambiguity(e.predict_proba(X))


def mlloo_batch(e: Ensemble, X) -> np.ndarray:
    X = e.check_input(X)
    p = e.predict_proba(X)
    deltas = np.empty((X.shape[0], X.shape[1]))
    for k in range(X.shape[1]):
        Xk = X.copy()
        Xk[:, k] = 0.0
        deltas[:, k] = p - e.predict_proba(Xk)
    return deltas.std(axis=1)


def average_path_length(n):
    """``c(n) = 2 H(n-1) - 2 (n-1) / n``: mean unsuccessful-search depth in a BST of n keys."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n >= 2
    m = n[big] - 1
    out[big] = 2.0 * (digamma(m + 1) + np.euler_gamma) - 2.0 * m / n[big]
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class IsolationTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def path_lengths(self, X) -> np.ndarray:
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        active = self.feature[node] >= 0
        rows = np.arange(n)
        while active.any():
            idx = node[active]
            go_left = X[rows[active], self.feature[idx]] < self.threshold[idx]
            node[active] = np.where(go_left, self.left[idx], self.right[idx])
            active = self.feature[node] >= 0
        return self.depth[node] + average_path_length(self.size[node])


def _grow_itree(X, rng, depth_cap) -> IsolationTree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n, dep):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(dep)
        return len(feature) - 1

    stack = [(np.arange(X.shape[0]), 0, new_node(X.shape[0], 0))]
    while stack:
        idx, dep, node = stack.pop()
        if dep >= depth_cap or idx.size <= 1:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        usable = np.flatnonzero(hi > lo)
        if usable.size == 0:
            continue
        f = int(usable[rng.integers(usable.size)])
        t = rng.uniform(lo[f], hi[f])
        while t <= lo[f]:
            t = rng.uniform(lo[f], hi[f])
        go_left = sub[:, f] < t
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, t
        left[node] = new_node(li.size, dep + 1)
        right[node] = new_node(ri.size, dep + 1)
        stack.append((li, dep + 1, left[node]))
        stack.append((ri, dep + 1, right[node]))
    return IsolationTree(
        np.asarray(feature), np.asarray(threshold), np.asarray(left),
        np.asarray(right), np.asarray(size, dtype=np.float64), np.asarray(depth, dtype=np.float64),
    )


@dataclass(frozen=True, eq=False)
class IsolationForest:
    trees: tuple
    subsample_size: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def expected_path_length(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.mean([t.path_lengths(X) for t in self.trees], axis=0)

    def score_samples(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return 2.0 ** (-self.expected_path_length(X) / average_path_length(self.subsample_size))


def fit_iforest(X, n_trees: int = 100, subsample: int = 256, seed: int = 0) -> IsolationForest:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DegenerateData("need at least two rows")
    if np.all(X == X[0]):
        raise DegenerateData("all rows are identical")
    psi = min(subsample, X.shape[0])
    depth_cap = math.ceil(math.log2(psi))
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(seed + t)
        rows = rng.choice(X.shape[0], size=psi, replace=False)
        trees.append(_grow_itree(X[rows], rng, depth_cap))
    return IsolationForest(tuple(trees), psi)


def score_iforest(f: IsolationForest, x) -> DetectorScore:
    return DetectorScore("iforest", float(f.score_samples(x)[0]))


@dataclass(eq=False)
class DetectorSuite:
    """Fitted state for every detector, scoring batches of examples."""

    ensemble: Ensemble
    reference: ReferenceSet | None = None
    iforest: IsolationForest | None = None
    wide: bool = True
    names: tuple = field(default=DETECTORS)

    def score(self, name: str, X) -> np.ndarray:
        if name == "ocscore":
            if self.reference is None:
                raise ValueError("ocscore needs a reference set")
            return ocscore_batch(self.ensemble, self.reference, X, self.wide)
        if name == "ambig":
            return ambiguity_batch(self.ensemble, X)
        if name == "mlloo":
            return mlloo_batch(self.ensemble, X)
        if name == "iforest":
            if self.iforest is None:
                raise ValueError("iforest needs training data")
            return self.iforest.score_samples(self.ensemble.check_input(X))
        raise ValueError(f"unknown detector {name!r}; choose from {', '.join(DETECTORS)}")


def parse_detector_list(spec: str) -> tuple:
    names = tuple(s.strip() for s in spec.split(",") if s.strip())
    bad = [n for n in names if n not in DETECTORS]
    if bad or not names:
        raise ValueError(f"unknown detectors {bad}; choose from {', '.join(DETECTORS)}")
    return names
