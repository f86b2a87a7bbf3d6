import math

import numpy as np
import pytest
from helpers import grid_closest_linf, grid_reachable_ocs, random_ensemble

from ocshield.attack import (
    BUDGET5X,
    budgeted_adversarial,
    closest_adversarial,
    count_feasible,
    enumerate_feasible,
    median_delta,
)
from ocshield.errors import EmptyList, EnumerationCapExceeded, NoAdversarialExists
from ocshield.model import LeafBox, bundled_model_path, closed_distance, evaluate, leaf_path, load_model, parse_model

ULP = np.finfo(np.float64).eps


def model(trees, d=1, aggregation="sum_logistic", base=0.0):
    return parse_model({"aggregation": aggregation, "base_score": base, "n_features": d, "trees": trees})


def split(f, t, left, right):
    return {"feature": f, "threshold": t, "left": left, "right": right}


def leaf(v):
    return {"value": v}


def flippable(rng, n, **kw):
    """Random small ensembles paired with a point whose label can be flipped in the unit box."""
    out = []
    while len(out) < n:
        e = random_ensemble(rng, **kw)
        x = rng.uniform(size=e.n_features)
        if grid_closest_linf(e, x, 0.01) is not None:
            out.append((e, x))
    return out


def test_one_split_geometry():
    e = model([split(0, 0.5, leaf(-1.0), leaf(1.0))])
    a = closest_adversarial(e, [0.3])
    assert a.perturbed[0] == 0.5
    assert a.linf == pytest.approx(0.2)
    assert a.l0 == 1 and a.source_label == 0 and a.kind == "closest"
    assert evaluate(e, a.perturbed)[2] == 1


def test_clamp_below_open_upper_bound():
    e = model([split(0, 0.5, leaf(-1.0), leaf(1.0))])
    a = closest_adversarial(e, [0.7])
    assert a.perturbed[0] == np.nextafter(0.5, -np.inf)
    assert a.distance == pytest.approx(0.2)
    assert a.linf <= a.distance + ULP


def test_constant_model_has_no_adversarial():
    e = model([leaf(0.3), leaf(0.2)], d=2)
    with pytest.raises(NoAdversarialExists):
        closest_adversarial(e, [0.5, 0.5])
    with pytest.raises(NoAdversarialExists):
        budgeted_adversarial(e, [0.5, 0.5], 1.0)


def test_domain_restricts_attacks():
    e = model([split(0, 2.0, leaf(-1.0), leaf(1.0))])
    with pytest.raises(NoAdversarialExists):
        closest_adversarial(e, [0.5])
    a = closest_adversarial(e, [0.5], domain=LeafBox.unbounded(1))
    assert a.perturbed[0] == 2.0


def test_closest_matches_dense_grid():
    rng = np.random.default_rng(0)
    for e, x in flippable(rng, 15):
        a = closest_adversarial(e, x)
        grid = grid_closest_linf(e, x, 1e-3)
        assert a.linf <= grid + 1e-12
        assert grid - a.linf <= 1e-3 + 1e-12
        assert evaluate(e, a.perturbed)[2] != evaluate(e, x)[2]
        assert np.all((a.perturbed >= 0) & (a.perturbed <= 1))


def test_adversarial_invariants():
    rng = np.random.default_rng(1)
    for e, x in flippable(rng, 20, max_features=4, max_trees=4):
        for a in (closest_adversarial(e, x), budgeted_adversarial(e, x, 0.5, kind=BUDGET5X)
                  if _has_within(e, x, 0.5) else None):
            if a is None:
                continue
            diff = a.perturbed - a.original
            assert a.linf == np.max(np.abs(diff))
            assert a.l0 == np.count_nonzero(diff)
            assert a.source_label == evaluate(e, x)[2]
            assert evaluate(e, a.perturbed)[2] != a.source_label
            assert np.array_equal(leaf_path(e, a.perturbed), a.oc)


def _has_within(e, x, budget):
    try:
        budgeted_adversarial(e, x, budget)
        return True
    except NoAdversarialExists:
        return False


def test_single_tree_enumeration():
    rng = np.random.default_rng(2)
    e = random_ensemble(rng, max_trees=1, max_depth=4)
    while e.n_trees != 1:
        e = random_ensemble(rng, max_trees=1, max_depth=4)
    # leaves behind contradictory splits have empty boxes and are skipped
    nonempty = sum(1 for lo, hi in zip(*e.trees[0].box_arrays(e.n_features)) if np.all(lo < hi))
    assert count_feasible(e) == nonempty


def test_full_tree_enumeration_counts_every_leaf():
    t = split(0, 0.5, split(1, 0.3, leaf(0), leaf(1)), split(1, 0.6, leaf(2), leaf(3)))
    assert count_feasible(model([t], d=2)) == 4


def test_bundled_model_excludes_exactly_the_contradictory_pairs():
    e = load_model(bundled_model_path())
    ocs = {tuple(f.oc.tolist()) for f in enumerate_feasible(e)}
    product = {(a, b) for a in range(3) for b in range(4)}
    assert product - ocs == {(1, 2), (1, 3)}
    assert count_feasible(e) == 10


def test_single_leaf_trees_and_independent_trees():
    assert count_feasible(model([leaf(0.1)] * 7)) == 1
    t1 = split(0, 0.5, split(0, 0.2, leaf(0), leaf(1)), leaf(2))
    t2 = split(1, 0.5, leaf(0), split(1, 0.8, leaf(1), leaf(2)))
    t2 = split(1, 0.1, leaf(5), t2)
    assert count_feasible(model([t1, t2], d=2)) == 3 * 4


def test_enumeration_matches_grid_and_round_trips():
    rng = np.random.default_rng(3)
    for _ in range(15):
        e = random_ensemble(rng, max_features=3, max_trees=4, max_depth=3)
        stream = list(enumerate_feasible(e))
        ocs = [tuple(f.oc.tolist()) for f in stream]
        assert len(ocs) == len(set(ocs))
        # thresholds lie inside (0, 1) so every feasible box meets the unit box
        assert set(ocs) == grid_reachable_ocs(e)
        for f in stream:
            assert not f.box.is_empty
            w = f.box.clamp(np.full(e.n_features, 0.5))
            assert tuple(leaf_path(e, w).tolist()) == tuple(f.oc.tolist())
            assert f.raw_output == e.raw_from_ocs(f.oc)[0]


def test_enumeration_within_box():
    e = load_model(bundled_model_path())
    within = LeafBox(np.array([0.0, 0.0, 0.0]), np.array([3.0, 10.0, 10.0]))
    ocs = {tuple(f.oc.tolist()) for f in enumerate_feasible(e, within)}
    assert all(b in (0, 1) for _, b in ocs)


def test_enumeration_cap():
    t = split(0, 0.5, leaf(0), leaf(1))
    e = model([split(i, 0.5, leaf(0), leaf(1)) for i in range(12)], d=12)
    assert count_feasible(model([t], d=1)) == 2
    with pytest.raises(EnumerationCapExceeded):
        count_feasible(e, cap=1000)


def _oracle_budgeted(e, x, budget):
    source = evaluate(e, x)[2]
    best = None
    sign = 1.0 if source == 0 else -1.0
    for f in enumerate_feasible(e, LeafBox.unit(e.n_features)):
        d = float(closed_distance(f.box.lo, f.box.hi, x).max())
        label = int(e.label_from_raw(f.raw_output))
        if d <= budget and label != source:
            key = (-sign * f.raw_output, d, tuple(f.oc.tolist()))
            if best is None or key < best[0]:
                best = (key, f)
    return best


def test_budgeted_matches_enumeration_oracle():
    rng = np.random.default_rng(4)
    checked = 0
    for e, x in flippable(rng, 30):
        closest = closest_adversarial(e, x)
        for budget in (closest.linf, 2 * closest.linf, 5 * closest.linf, math.inf):
            a = budgeted_adversarial(e, x, budget)
            best = _oracle_budgeted(e, x, budget)
            assert best is not None
            assert a.raw_output == best[1].raw_output
            assert a.distance == best[0][1]
            assert np.array_equal(a.oc, best[1].oc)
            assert a.linf <= budget + ULP
            checked += 1
    assert checked == 120


def test_budgeted_ties_prefer_closer_then_lexicographic():
    # leaves 0 and 2 give the same output; the nearer one wins
    t = split(0, 0.4, leaf(2.0), split(0, 0.6, leaf(-1.0), leaf(2.0)))
    assert budgeted_adversarial(model([t]), [0.52], 1.0).oc.tolist() == [2]
    assert budgeted_adversarial(model([t]), [0.45], 1.0).oc.tolist() == [0]
    # equal output and distance: the smaller configuration wins
    assert 0.5 - 0.4 == 0.6 - 0.5
    assert budgeted_adversarial(model([t]), [0.5], 1.0).oc.tolist() == [0]
    u = split(1, 0.5, leaf(1.0), leaf(1.0))
    e = model([split(0, 0.5, leaf(-3.0), leaf(0.0)), u], d=2)
    assert budgeted_adversarial(e, [0.3, 0.5], 1.0).oc.tolist() == [1, 0]


def test_budget_below_closest_fails():
    e = model([split(0, 0.5, leaf(-1.0), leaf(1.0))])
    with pytest.raises(NoAdversarialExists):
        budgeted_adversarial(e, [0.3], 0.19)
    assert budgeted_adversarial(e, [0.3], 0.2).perturbed[0] == 0.5
    with pytest.raises(ValueError):
        budgeted_adversarial(e, [0.3], 0.0)


def test_budgeted_prefers_confidence():
    # near flip at 0.5 is weak, far flip at 0.8 is strong
    t = split(0, 0.5, leaf(-1.0), split(0, 0.8, leaf(1.5), leaf(3.0)))
    e = model([t])
    assert budgeted_adversarial(e, [0.3], 0.3).raw_output == 1.5
    a = budgeted_adversarial(e, [0.3], 0.5)
    assert a.raw_output == 3.0 and a.perturbed[0] == 0.8


def test_median_delta():
    class A:
        def __init__(self, v):
            self.linf = v

    assert median_delta([A(0.1)]) == 0.1
    assert median_delta([A(0.1), A(0.3)]) == pytest.approx(0.2)
    with pytest.raises(EmptyList):
        median_delta([])
