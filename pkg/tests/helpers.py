"""Shared generators and independent oracles for the test suite."""

import itertools

import numpy as np

from ocshield.model import AVERAGE_PROB, SUM_LOGISTIC, parse_model


def random_tree_dict(rng, n_features, depth, average=False, p_leaf=0.25):
    """Random tree; thresholds are multiples of 0.01 in [0.01, 0.99]."""
    if depth == 0 or rng.uniform() < p_leaf:
        v = rng.uniform() if average else rng.normal()
        return {"value": float(v)}
    return {
        "feature": int(rng.integers(n_features)),
        "threshold": float(rng.integers(1, 100)) / 100.0,
        "left": random_tree_dict(rng, n_features, depth - 1, average, p_leaf),
        "right": random_tree_dict(rng, n_features, depth - 1, average, p_leaf),
    }


def random_ensemble(rng, max_features=3, max_trees=3, max_depth=3, average=None):
    if average is None:
        average = bool(rng.integers(2))
    d = int(rng.integers(1, max_features + 1))
    m = int(rng.integers(1, max_trees + 1))
    doc = {
        "aggregation": AVERAGE_PROB if average else SUM_LOGISTIC,
        "base_score": 0.0 if average else float(rng.normal(0, 0.3)),
        "n_features": d,
        "trees": [random_tree_dict(rng, d, int(rng.integers(min(1, max_depth), max_depth + 1)), average) for _ in range(m)],
    }
    return parse_model(doc)


def naive_route(tree_dict, x):
    """Leaf value and depth-first leaf index by walking the nested dict."""
    counter = itertools.count()

    def number(node):
        if "value" in node:
            node["_id"] = next(counter)
        else:
            number(node["left"])
            number(node["right"])

    number(tree_dict)
    node = tree_dict
    while "value" not in node:
        node = node["left"] if x[node["feature"]] < node["threshold"] else node["right"]
    return node["value"], node["_id"]


def naive_hamming(a, b):
    count = 0
    for u, v in zip(a, b):
        if u != v:
            count += 1
    return count


def interval_grid(e, step=1e-3):
    """Per-feature representatives of the dense grid ``{0, step, ..., 1}``.

    The ensemble's prediction only depends on which threshold interval each
    coordinate falls in, so for every feature we keep, per interval, all grid
    points of that interval.  Callers reduce further as needed.
    """
    n = int(round(1.0 / step))
    grid = np.arange(n + 1) * step
    per_feature = []
    for f in range(e.n_features):
        thr = sorted({float(t.threshold[i]) for t in e.trees for i in np.flatnonzero(t.feature == f)})
        cell = np.searchsorted(np.asarray(thr), grid, side="right")
        per_feature.append((grid, cell))
    return per_feature


def grid_closest_linf(e, x, step=1e-3):
    """Smallest L-infinity distance from x to a grid point with the other label.

    Exact over the dense grid of the unit box: along each feature the grid
    point of a threshold interval that is nearest to x[f] dominates every
    other grid point of that interval, so only those need to be combined.
    """
    source = e.predict(x[None, :])[0]
    cands = []
    for f, (grid, cell) in enumerate(interval_grid(e, step)):
        reps = []
        for c in np.unique(cell):
            g = grid[cell == c]
            reps.append(g[np.argmin(np.abs(g - x[f]))])
        cands.append(np.asarray(reps))
    pts = np.array(list(itertools.product(*cands)))
    flipped = e.predict(pts) != source
    if not flipped.any():
        return None
    return float(np.max(np.abs(pts[flipped] - x), axis=1).min())


def grid_reachable_ocs(e, step=1e-3):
    """Distinct leaf paths over the dense grid of the unit box (one point per interval suffices)."""
    cands = []
    for grid, cell in interval_grid(e, step):
        cands.append(np.array([grid[cell == c][0] for c in np.unique(cell)]))
    pts = np.array(list(itertools.product(*cands)))
    return {tuple(int(v) for v in row) for row in e.leaf_paths(pts)}


def literal_grid(d, step):
    axes = [np.arange(int(round(1.0 / step)) + 1) * step] * d
    return np.array(list(itertools.product(*axes)))
