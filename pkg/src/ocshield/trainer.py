"""Small exact-greedy tree learners: logistic gradient boosting and a bagged forest.

These exist so that tests and desk-scale experiments can build ensembles
without external model files.  Splits are searched exhaustively over the
midpoints between consecutive distinct feature values.  Among equal-gain
candidates the lowest feature index wins, then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigLimit, DegenerateLabels
from .model import AVERAGE_PROB, MAX_TREES, SUM_LOGISTIC, Ensemble, Tree

BOOSTING = "boosting"
FOREST = "forest"
MAX_DEPTH = 8


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 20
    max_depth: int = 4
    learning_rate: float = 0.3
    mode: str = BOOSTING
    seed: int = 0
    min_samples_leaf: int = 1

    def validate(self):
        if not 1 <= self.n_trees <= MAX_TREES:
            raise ConfigLimit(f"n_trees must be in 1..{MAX_TREES}")
        if not 0 <= self.max_depth <= MAX_DEPTH:
            raise ConfigLimit(f"max_depth must be in 0..{MAX_DEPTH} (at most 256 leaves)")
        if self.mode not in (BOOSTING, FOREST):
            raise ConfigLimit(f"unknown mode {self.mode!r}")
        if self.min_samples_leaf < 1:
            raise ConfigLimit("min_samples_leaf must be positive")
        if not self.learning_rate > 0:
            raise ConfigLimit("learning_rate must be positive")


def _best_split(X, criterion_stats, min_leaf):
    """Best (gain, feature, threshold) or None.

    ``criterion_stats(order_stats)`` receives, for one feature sorted by
    value, the cumulative statistics and returns the gain for every cut
    position.
    """
    n, d = X.shape
    best = None
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        # cut after position i: left = order[: i + 1]
        valid = xs[:-1] < xs[1:]
        pos = np.arange(n - 1)
        valid &= (pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)
        if not valid.any():
            continue
        gain = criterion_stats(order)
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        g = gain[i]
        if not np.isfinite(g) or g <= 1e-12:
            continue
        # smallest threshold among ties comes first by construction (argmax)
        thr = 0.5 * (xs[i] + xs[i + 1])
        if thr <= xs[i]:  # midpoint rounded down onto the left value
            thr = xs[i + 1]
        if best is None or g > best[0]:
            best = (g, f, thr)
    return best


def _grow(X, leaf_value, criterion_factory, max_depth, min_leaf, idx=None, depth=0):
    if idx is None:
        idx = np.arange(X.shape[0])
    node = None
    if depth < max_depth and idx.size >= 2 * min_leaf:
        split = _best_split(X[idx], criterion_factory(idx), min_leaf)
        if split is not None:
            _, f, thr = split
            go_left = X[idx, f] < thr
            node = {
                "feature": int(f),
                "threshold": float(thr),
                "left": _grow(X, leaf_value, criterion_factory, max_depth, min_leaf, idx[go_left], depth + 1),
                "right": _grow(X, leaf_value, criterion_factory, max_depth, min_leaf, idx[~go_left], depth + 1),
            }
    if node is None:
        node = {"value": float(leaf_value(idx))}
    return node


def _sse_gain(residual):
    def factory(idx):
        r = residual[idx]
        total, n = r.sum(), r.size

        def gain(order):
            cs = np.cumsum(r[order])[:-1]
            nl = np.arange(1, n)
            nr = n - nl
            return cs**2 / nl + (total - cs) ** 2 / nr - total**2 / n

        return gain

    return factory


def _gini_gain(y):
    def factory(idx):
        yy = y[idx].astype(np.float64)
        n = yy.size
        pos = yy.sum()
        parent = 1.0 - (pos / n) ** 2 - (1 - pos / n) ** 2

        def gain(order):
            cpos = np.cumsum(yy[order])[:-1]
            nl = np.arange(1, n)
            nr = n - nl
            pl = cpos / nl
            pr = (pos - cpos) / nr
            gl = 1.0 - pl**2 - (1 - pl) ** 2
            gr = 1.0 - pr**2 - (1 - pr) ** 2
            return parent - (nl * gl + nr * gr) / n

        return gain

    return factory


def _check_data(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, d) and y of length n")
    if not np.isin(y, (0, 1)).all():
        raise DegenerateLabels("labels must be 0 or 1")
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise DegenerateLabels(f"need at least two examples per class, got {counts.tolist()}")
    return X, y


def train(X, y, cfg: TrainConfig) -> Ensemble:
    cfg.validate()
    X, y = _check_data(X, y)
    if cfg.mode == BOOSTING:
        return _train_boosting(X, y, cfg)
    return _train_forest(X, y, cfg)


def _train_boosting(X, y, cfg):
    p0 = y.mean()
    base = float(np.log(p0 / (1 - p0)))
    raw = np.full(X.shape[0], base)
    trees = []
    for _ in range(cfg.n_trees):
        p = 1.0 / (1.0 + np.exp(-raw))
        residual = y - p
        hess = p * (1 - p)

        def newton(idx, residual=residual, hess=hess):
            return cfg.learning_rate * residual[idx].sum() / max(hess[idx].sum(), 1e-12)

        root = _grow(X, newton, _sse_gain(residual), cfg.max_depth, cfg.min_samples_leaf)
        tree = Tree.from_dict(root)
        trees.append(tree)
        raw = raw + _tree_values(tree, X)
    return Ensemble(tuple(trees), n_features=X.shape[1], base_score=base, aggregation=SUM_LOGISTIC)


def _train_forest(X, y, cfg):
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    trees = []
    for _ in range(cfg.n_trees):
        sample = rng.integers(0, n, size=n)
        Xb, yb = X[sample], y[sample]
        root = _grow(Xb, lambda idx, yb=yb: yb[idx].mean(), _gini_gain(yb), cfg.max_depth, cfg.min_samples_leaf)
        trees.append(Tree.from_dict(root))
    return Ensemble(tuple(trees), n_features=X.shape[1], base_score=0.0, aggregation=AVERAGE_PROB)


def _tree_values(tree: Tree, X) -> np.ndarray:
    e = Ensemble((tree,), n_features=X.shape[1])
    return e.value_table[0, e.leaf_paths(X)[:, 0]]


def log_loss(e: Ensemble, X, y) -> float:
    p = np.clip(e.predict_proba(X), 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
