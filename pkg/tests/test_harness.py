import itertools

import numpy as np
import pytest

from ocshield.attack import AdversarialExample
from ocshield.errors import InsufficientCorrect, SingleClass, TooFewExamples
from ocshield.harness import (
    EvalConfig,
    build_adv_sets,
    coverage_detection_curve,
    curve_auc,
    denormalize,
    evaluate_dataset,
    fit_ranges,
    kfold_split,
    make_dataset,
    normalize,
    read_feature_csv,
    refset_sweep,
    roc_auc,
    adv_vs_random_distributions,
    write_results,
)
from ocshield.ocspace import build_reference
from ocshield.trainer import BOOSTING, FOREST, TrainConfig, train

ULP = np.finfo(np.float64).eps
SMALL_MODELS = {
    "xgb": TrainConfig(n_trees=8, max_depth=3, mode=BOOSTING),
    "rf": TrainConfig(n_trees=6, max_depth=3, mode=FOREST),
}


def pairwise_auc(scores, is_adv):
    adv = [s for s, a in zip(scores, is_adv) if a]
    nor = [s for s, a in zip(scores, is_adv) if not a]
    total = 0.0
    for a, n in itertools.product(adv, nor):
        total += 1.0 if a > n else 0.5 if a == n else 0.0
    return total / (len(adv) * len(nor))


@pytest.fixture(scope="module")
def setup():
    ds = make_dataset("xor-grid", 800, 1)
    ranges = fit_ranges(ds.X[:600])
    Xtr, Xte = normalize(ds.X[:600], ranges), normalize(ds.X[600:], ranges)
    e = train(Xtr, ds.y[:600], TrainConfig(n_trees=10, max_depth=3))
    sets = build_adv_sets(e, Xte, ds.y[600:], 15, seed=4)
    return e, Xtr, ds.y[:600], Xte, ds.y[600:], sets


def test_kfold_examples():
    folds = kfold_split(np.array([0, 1] * 5), 5, seed=0)
    assert [len(te) for _, te in folds] == [2] * 5
    y = np.array([1] * 8 + [0] * 2)
    for _, te in kfold_split(y, 2, seed=3):
        assert np.sum(y[te] == 0) == 1
    with pytest.raises(TooFewExamples):
        kfold_split(np.array([0, 1]), 3)
    with pytest.raises(TooFewExamples):
        kfold_split(np.array([0, 1, 0]), 1)


def test_kfold_partition_and_stratification():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(10, 300))
        y = (rng.uniform(size=n) < rng.uniform(0.1, 0.9)).astype(int)
        k = int(rng.integers(2, 8))
        folds = kfold_split(y, k, seed=int(rng.integers(100)))
        tests = np.concatenate([te for _, te in folds])
        assert sorted(tests.tolist()) == list(range(n))
        for tr, te in folds:
            assert not set(tr) & set(te) and len(tr) + len(te) == n
            for c in (0, 1):
                expected = np.sum(y == c) * len(te) / n
                assert abs(np.sum(y[te] == c) - expected) <= 1 + 1e-9
    assert [t.tolist() for _, t in kfold_split(y, 3, 5)] == [t.tolist() for _, t in kfold_split(y, 3, 5)]


def test_normalization():
    rng = np.random.default_rng(1)
    X = rng.normal(3, 10, (100, 4))
    X[:, 3] = 2.0  # constant column
    r = fit_ranges(X)
    Z = normalize(X, r)
    assert Z.min() >= 0 and Z.max() <= 1
    np.testing.assert_allclose(denormalize(Z, r), X, rtol=0, atol=1e-12 * np.abs(X).max())
    out = normalize(np.array([[1e6, -1e6, 0, 2.0]]), r)
    assert out[0, 0] == 1.0 and out[0, 1] == 0.0


def test_datasets():
    for name, d in (("xor-grid", 8), ("interleaved-clusters", 2)):
        ds = make_dataset(name, 500, 0)
        assert ds.X.shape == (500, d) and set(np.unique(ds.y)) == {0, 1}
        assert np.array_equal(make_dataset(name, 500, 0).X, ds.X)
    with pytest.raises(ValueError):
        make_dataset("mnist")


def test_read_feature_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,label,b\n1.5,1,2\n3,0,4\n", encoding="utf-8")
    X, y, names = read_feature_csv(p)
    assert names == ["a", "b"] and X.tolist() == [[1.5, 2.0], [3.0, 4.0]] and y.tolist() == [1, 0]
    p.write_text("a,b\n1,x\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_feature_csv(p)
    p.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_feature_csv(p, require_label=True)


def test_adv_sets_structure(setup):
    e, _, _, Xte, yte, sets = setup
    closest = sets["closest"]
    assert closest.n_adv + closest.n_dropped == 15
    assert closest.n_normal == 75
    delta = closest.delta_med
    assert delta == np.median([a.linf for a in closest.attacks])
    for kind, mult in (("x2", 2), ("x5", 5)):
        s = sets[kind]
        assert s.n_adv + s.n_dropped == 15
        assert all(a.linf <= mult * delta + ULP for a in s.attacks)
        assert s.delta_med == delta
    for s in sets.values():
        src = e.predict(np.array([a.original for a in s.attacks]))
        assert np.all(e.predict(s.X[s.is_adv]) != src)
        # adversarial examples come from correctly classified test rows
        assert all(any(np.array_equal(a.original, x) for x in Xte[e.predict(Xte) == yte]) for a in s.attacks)


def test_adv_sets_deterministic_and_guards(setup):
    e, _, _, Xte, yte, sets = setup
    again = build_adv_sets(e, Xte, yte, 15, seed=4)
    for k in sets:
        assert np.array_equal(again[k].X, sets[k].X)
    one = build_adv_sets(e, Xte, yte, 1, seed=0)
    assert one["closest"].delta_med == one["closest"].attacks[0].linf
    with pytest.raises(InsufficientCorrect):
        build_adv_sets(e, Xte, yte, len(yte) + 1, seed=0)


def test_roc_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([3, 3, 3, 3], [0, 1, 0, 1]) == 0.5
    with pytest.raises(SingleClass):
        roc_auc([1, 2], [1, 1])


def test_roc_auc_pairwise_and_monotone_invariance():
    rng = np.random.default_rng(2)
    for _ in range(30):
        n = int(rng.integers(2, 60))
        s = rng.integers(0, 6, n).astype(float)
        a = rng.integers(0, 2, n).astype(bool)
        a[0], a[1] = True, False
        auc = roc_auc(s, a)
        assert auc == pytest.approx(pairwise_auc(s, a), abs=1e-12)
        assert roc_auc(2 * s + 1, a) == auc


def test_curve_examples():
    pts = coverage_detection_curve([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert any(p.coverage == 1.0 and p.detection_rate == 1.0 for p in pts)
    flat = coverage_detection_curve([1.0] * 4, [0, 1, 0, 1])
    assert [(p.coverage, p.detection_rate) for p in flat] == [(0.0, 1.0), (1.0, 0.0)]
    assert flat[0].threshold == -np.inf
    with pytest.raises(SingleClass):
        coverage_detection_curve([1, 2], [0, 0])


def test_curve_monotone_and_area_matches_auc():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(2, 200))
        s = np.round(rng.normal(size=n), 1)
        a = rng.uniform(size=n) < 0.3
        a[0], a[1] = True, False
        pts = coverage_detection_curve(s, a)
        cov = [p.coverage for p in pts]
        det = [p.detection_rate for p in pts]
        assert cov == sorted(cov) and det == sorted(det, reverse=True)
        assert cov[0] == 0.0 and cov[-1] == 1.0 and det[0] == 1.0 and det[-1] == 0.0
        assert abs(curve_auc(pts) - roc_auc(s, a)) <= 1e-9


def test_refset_sweep(setup):
    e, Xtr, ytr, _, _, sets = setup
    r = build_reference(e, Xtr, ytr)
    rows = refset_sweep(e, r, sets["x5"], (0.2, 0.5, 1.0), seed=0)
    assert [f for f, _, _ in rows] == [0.2, 0.5, 1.0]
    scores = rows[-1][1]
    from ocshield.detectors import ocscore_batch

    assert scores == roc_auc(ocscore_batch(e, r, sets["x5"].X), sets["x5"].is_adv)
    assert all(ms > 0 for _, _, ms in rows)


def test_adv_vs_random(setup):
    e, _, _, _, _, sets = setup
    attacks = sets["x5"].attacks
    adv, rnd = adv_vs_random_distributions(e, attacks, seed=0)
    assert adv.shape == rnd.shape == (len(attacks),)
    assert np.all((adv >= 0) & (adv <= 1) & (rnd >= 0) & (rnd <= 1))
    a2, r2 = adv_vs_random_distributions(e, attacks, seed=0)
    assert np.array_equal(adv, a2) and np.array_equal(rnd, r2)
    assert adv.mean() > rnd.mean()
    x = attacks[0].original
    still = AdversarialExample(x, x.copy(), 0.0, 0, 0, "x5", e.leaf_paths(x[None])[0], 0.0, 0.0)
    a0, r0 = adv_vs_random_distributions(e, [still], seed=0)
    assert a0.tolist() == [0.0] and r0.tolist() == [0.0]
    empty = adv_vs_random_distributions(e, [], seed=0)
    assert empty[0].size == 0


def test_ocscore_orientation(setup):
    from ocshield.detectors import ocscore_batch

    e, Xtr, ytr, _, _, sets = setup
    r = build_reference(e, Xtr, ytr)
    for s in sets.values():
        sc = ocscore_batch(e, r, s.X)
        assert sc[s.is_adv].mean() >= sc[~s.is_adv].mean()


def test_evaluate_small_is_deterministic(tmp_path):
    ds = make_dataset("interleaved-clusters", 500, 2)
    cfg = EvalConfig(folds=2, seed=5, n_attacks=8, models=SMALL_MODELS, fractions=(0.5, 1.0))
    a = write_results(evaluate_dataset(ds, cfg), tmp_path / "a")
    b = write_results(evaluate_dataset(ds, cfg), tmp_path / "b")
    names = [p.name for p in a]
    assert names == ["auc.csv", "curve.csv", "timings.csv", "refsweep.csv", "advrand.csv"]
    for pa, pb in zip(a, b):
        if pa.name in ("auc.csv", "curve.csv", "advrand.csv"):
            assert pa.read_bytes() == pb.read_bytes()
    auc_lines = (tmp_path / "a" / "auc.csv").read_text().splitlines()
    assert auc_lines[0] == "dataset,model,detector,adv_kind,fold,auc"
    # 2 models x 4 detectors x 3 kinds x 2 folds
    assert len(auc_lines) == 1 + 2 * 4 * 3 * 2
    assert (tmp_path / "a" / "curve.csv").read_text().splitlines()[1].split(",")[4] == "-inf"
