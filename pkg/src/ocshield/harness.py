"""Desk-scale evaluation protocol.

Per fold: min-max normalize with training-fold ranges, train an ensemble,
build the reference set and baselines, attack sampled correctly classified
test examples (closest, then 2x and 5x the median closest distance), mix
each adversarial set with normal test examples and score every detector.

Randomness flows from one root seed: fold splitting uses the root seed
directly and per-fold tasks draw from ``SeedSequence([seed, fold, task])``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .attack import (
    BUDGET2X,
    BUDGET5X,
    CLOSEST,
    KINDS,
    budgeted_adversarial,
    closest_adversarial,
    median_delta,
)
from .detectors import DETECTORS, DetectorSuite, fit_iforest
from .errors import InsufficientCorrect, NoAdversarialExists, SingleClass, TooFewExamples
from .model import Ensemble, LeafBox
from .ocspace import ReferenceSet, batch_oc_scores, build_reference
from .trainer import BOOSTING, FOREST, TrainConfig, train

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_RATIO = 5

# task ids for seed derivation
_TASK_TRAIN, _TASK_ATTACK, _TASK_IFOREST, _TASK_SWEEP, _TASK_RANDOM = range(5)

DEFAULT_MODELS = {
    "xgb": TrainConfig(n_trees=20, max_depth=4, learning_rate=0.3, mode=BOOSTING),
    "rf": TrainConfig(n_trees=20, max_depth=5, mode=FOREST),
}


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str = "data"
    feature_ranges: np.ndarray | None = None

    def __len__(self):
        return len(self.y)


def make_dataset(name: str, n: int = 4000, seed: int = 0) -> Dataset:
    """Built-in synthetic benchmarks.

    ``xor-grid``: 8 uniform features; the label is the XOR of whether the
    first two exceed 0.5, with 5% of labels flipped.  The other six features
    are noise.
    ``interleaved-clusters``: two noisy interleaving half circles in 2-D.
    """
    rng = np.random.default_rng(seed)
    if name == "xor-grid":
        X = rng.uniform(size=(n, 8))
        y = ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.5)).astype(np.int64)
        flip = rng.uniform(size=n) < 0.05
        y[flip] ^= 1
    elif name == "interleaved-clusters":
        t = rng.uniform(0.0, np.pi, n)
        y = rng.integers(0, 2, n)
        X = np.column_stack([
            np.where(y == 0, np.cos(t), 1.0 - np.cos(t)),
            np.where(y == 0, np.sin(t), 0.5 - np.sin(t)),
        ])
        X += rng.normal(0.0, 0.15, X.shape)
    else:
        raise ValueError(f"unknown dataset {name!r}; choose from {', '.join(BUILTIN_DATASETS)}")
    return Dataset(X, y.astype(np.int64), name)


BUILTIN_DATASETS = ("xor-grid", "interleaved-clusters")


def load_csv_dataset(path, label_column: str = "label") -> Dataset:
    X, y, _ = read_feature_csv(path, label_column, require_label=True)
    return Dataset(X, y, Path(path).stem)


def read_feature_csv(path, label_column: str = "label", require_label: bool = False):
    """Read a header-first CSV; returns (X, y or None, feature names)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if label_column in header:
        li = header.index(label_column)
    elif require_label:
        raise ValueError(f"{path}: no {label_column!r} column")
    else:
        li = None
    feat_cols = [i for i in range(len(header)) if i != li]
    try:
        data = np.array([[float(r[i]) for i in range(len(header))] for r in body], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: non-numeric or ragged row ({exc})") from None
    data = data.reshape(len(body), len(header))
    X = data[:, feat_cols]
    y = data[:, li].astype(np.int64) if li is not None else None
    return X, y, [header[i] for i in feat_cols]


def fit_ranges(X) -> np.ndarray:
    """Per-feature (min, max) as a (d, 2) array."""
    X = np.asarray(X, dtype=np.float64)
    return np.column_stack([X.min(axis=0), X.max(axis=0)])


def normalize(X, ranges, clamp: bool = True) -> np.ndarray:
    lo, hi = ranges[:, 0], ranges[:, 1]
    span = np.where(hi > lo, hi - lo, 1.0)
    Z = (np.asarray(X, dtype=np.float64) - lo) / span
    return np.clip(Z, 0.0, 1.0) if clamp else Z


def denormalize(Z, ranges) -> np.ndarray:
    lo, hi = ranges[:, 0], ranges[:, 1]
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.asarray(Z) * span + lo


def kfold_split(y, k: int, seed: int = 0) -> list:
    """Stratified k-fold split: list of (train_idx, test_idx)."""
    y = np.asarray(y.y if isinstance(y, Dataset) else y)
    n = len(y)
    if k < 2 or n < k:
        raise TooFewExamples(f"cannot split {n} examples into {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    start = 0
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        fold_of[idx] = (start + np.arange(idx.size)) % k
        start += idx.size
    return [(np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)) for f in range(k)]


def _rng(seed: int, fold: int, task: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, fold, task]))


@dataclass
class EvalSet:
    """Normal test examples followed by adversarial ones."""

    kind: str
    X: np.ndarray
    is_adv: np.ndarray
    correct: np.ndarray
    attacks: list = field(default_factory=list)
    n_dropped: int = 0
    delta_med: float = math.nan

    @property
    def n_normal(self) -> int:
        return int(np.count_nonzero(~self.is_adv))

    @property
    def n_adv(self) -> int:
        return int(np.count_nonzero(self.is_adv))


def build_adv_sets(
    e: Ensemble,
    X_test,
    y_test,
    n_attacks: int,
    seed=0,
    ratio: int = DEFAULT_RATIO,
    domain: LeafBox | None = None,
) -> dict:
    """Closest, 2x and 5x adversarial sets, each mixed with normal test examples.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X_test = e.check_input(X_test)
    y_test = np.asarray(y_test)
    pred = e.predict(X_test)
    correct = np.flatnonzero(pred == y_test)
    if correct.size < n_attacks:
        raise InsufficientCorrect(f"{correct.size} correctly classified test examples, need {n_attacks}")
    chosen = np.sort(rng.choice(correct, size=n_attacks, replace=False))
    n_normal = min(ratio * n_attacks, len(y_test))
    normals = np.sort(rng.choice(len(y_test), size=n_normal, replace=False))

    closest, sources = [], []
    dropped = 0
    for i in chosen:
        try:
            closest.append(closest_adversarial(e, X_test[i], domain))
            sources.append(i)
        except NoAdversarialExists:
            dropped += 1
    if not closest:
        raise InsufficientCorrect("no closest adversarial example could be generated")
    delta = median_delta(closest)
    sets = {CLOSEST: (closest, dropped)}
    for kind, mult in ((BUDGET2X, 2.0), (BUDGET5X, 5.0)):
        attacks, fails = [], dropped
        for i in sources:
            try:
                attacks.append(budgeted_adversarial(e, X_test[i], mult * delta, domain, kind=kind))
            except NoAdversarialExists:
                fails += 1
        sets[kind] = (attacks, fails)

    out = {}
    Xn = X_test[normals]
    cn = pred[normals] == y_test[normals]
    for kind, (attacks, fails) in sets.items():
        Xa = np.array([a.perturbed for a in attacks]).reshape(len(attacks), X_test.shape[1])
        out[kind] = EvalSet(
            kind=kind,
            X=np.vstack([Xn, Xa]),
            is_adv=np.concatenate([np.zeros(len(Xn), bool), np.ones(len(Xa), bool)]),
            correct=np.concatenate([cn, np.zeros(len(Xa), bool)]),
            attacks=attacks,
            n_dropped=fails,
            delta_med=delta,
        )
    return out


def _check_two_classes(is_adv):
    is_adv = np.asarray(is_adv, dtype=bool)
    if is_adv.all() or not is_adv.any():
        raise SingleClass("need both adversarial and normal examples")
    return is_adv


def roc_auc(scores, is_adv) -> float:
    """Probability that an adversarial example outscores a normal one (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    is_adv = _check_two_classes(is_adv)
    ranks = rankdata(scores)
    n_a = int(is_adv.sum())
    n_n = len(scores) - n_a
    u = ranks[is_adv].sum() - n_a * (n_a + 1) / 2.0
    return float(u / (n_a * n_n))


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    coverage: float
    detection_rate: float


def coverage_detection_curve(scores, is_adv) -> list:
    """Coverage and detection rate when flagging ``score > t`` for every distinct t.

    The first point (t = -inf) flags everything.
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_adv = _check_two_classes(is_adv)
    normal = np.sort(scores[~is_adv])
    adv = np.sort(scores[is_adv])
    thresholds = np.concatenate([[-np.inf], np.unique(scores)])
    cov = np.searchsorted(normal, thresholds, side="right") / normal.size
    det = 1.0 - np.searchsorted(adv, thresholds, side="right") / adv.size
    return [CurvePoint(float(t), float(c), float(d)) for t, c, d in zip(thresholds, cov, det)]


def curve_auc(points) -> float:
    """Trapezoid area under detection rate vs. (1 - coverage)."""
    fpr = np.array([1.0 - p.coverage for p in points])[::-1]
    tpr = np.array([p.detection_rate for p in points])[::-1]
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(tpr, fpr))


def _timed_scan(r, ocs, labels, wide, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        scores = batch_oc_scores(r, ocs, labels, wide)
        times.append(time.perf_counter() - t0)
    return scores, float(np.median(times)) / max(len(ocs), 1) * 1e3


def refset_sweep(
    e: Ensemble,
    r_full: ReferenceSet,
    evalset: EvalSet,
    fractions=DEFAULT_FRACTIONS,
    seed=0,
    wide: bool = True,
) -> list:
    """(fraction, auc, mean_ms) for OC-score on subsampled reference sets."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ocs = e.leaf_paths(evalset.X)
    labels = e.label_from_raw(e.raw_from_ocs(ocs))
    rows = []
    for frac in fractions:
        r = r_full if frac >= 1.0 else r_full.subsample(frac, rng)
        scores, ms = _timed_scan(r, ocs, labels, wide)
        rows.append((float(frac), roc_auc(scores, evalset.is_adv), ms))
    return rows


def adv_vs_random_distributions(e: Ensemble, attacks, seed=0, domain: LeafBox | None = None):
    """Normalized Hamming distances in OC-space for adversarial vs. norm-matched random perturbations.

    For each attack a random perturbation moves ``l0`` uniformly chosen
    features by +/- the attack's L-infinity size, then clamps to the domain.
    Returns two aligned arrays (adversarial, random).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if not attacks:
        return np.zeros(0), np.zeros(0)
    d = e.n_features
    domain = LeafBox.unit(d) if domain is None else domain
    top = np.nextafter(domain.hi, -np.inf)
    orig = np.array([a.original for a in attacks])
    adv = np.array([a.perturbed for a in attacks])
    rand = orig.copy()
    for i, a in enumerate(attacks):
        feats = rng.choice(d, size=a.l0, replace=False)
        signs = rng.choice((-1.0, 1.0), size=a.l0)
        rand[i, feats] += signs * a.linf
    rand = np.clip(rand, domain.lo, top)
    base = e.leaf_paths(orig)
    m = e.n_trees
    adv_d = np.count_nonzero(base != e.leaf_paths(adv), axis=1) / m
    rand_d = np.count_nonzero(base != e.leaf_paths(rand), axis=1) / m
    return adv_d, rand_d


@dataclass
class EvalConfig:
    folds: int = 5
    seed: int = 0
    n_attacks: int = 100
    ratio: int = DEFAULT_RATIO
    n_samples: int = 4000
    detectors: tuple = DETECTORS
    fractions: tuple = DEFAULT_FRACTIONS
    models: dict = field(default_factory=lambda: dict(DEFAULT_MODELS))
    wide: bool = True


@dataclass
class EvalResults:
    auc: list = field(default_factory=list)          # (dataset, model, detector, kind, fold, auc)
    curves: list = field(default_factory=list)       # (dataset, model, detector, kind, t, cov, det)
    timings: list = field(default_factory=list)      # (dataset, model, detector, mean_ms, std_ms)
    refsweep: list = field(default_factory=list)     # (dataset, model, kind, fraction, auc, mean_ms)
    advrand: list = field(default_factory=list)      # (dataset, model, kind, fold, adv_mean, rand_mean)
    dropped: list = field(default_factory=list)      # (dataset, model, kind, fold, n_dropped)

    def mean_auc(self, dataset, model, detector, kind) -> float:
        vals = [r[5] for r in self.auc if r[:4] == (dataset, model, detector, kind)]
        return float(np.mean(vals))

    def advrand_gap(self, dataset, model, kind) -> tuple:
        rows = [r for r in self.advrand if r[:3] == (dataset, model, kind)]
        return float(np.mean([r[4] for r in rows])), float(np.mean([r[5] for r in rows]))


def evaluate_dataset(ds: Dataset, cfg: EvalConfig, results: EvalResults | None = None) -> EvalResults:
    results = EvalResults() if results is None else results
    splits = kfold_split(ds.y, cfg.folds, cfg.seed)
    for model_name, tcfg in cfg.models.items():
        pooled = {(det, kind): ([], []) for det in cfg.detectors for kind in KINDS}
        times = {det: [] for det in cfg.detectors}
        sweep = {kind: [] for kind in KINDS}
        for fold, (tr, te) in enumerate(splits):
            log.info("%s/%s fold %d", ds.name, model_name, fold)
            ranges = fit_ranges(ds.X[tr])
            Xtr, Xte = normalize(ds.X[tr], ranges), normalize(ds.X[te], ranges)
            ytr, yte = ds.y[tr], ds.y[te]
            fold_cfg = replace(tcfg, seed=int(_rng(cfg.seed, fold, _TASK_TRAIN).integers(2**31)))
            e = train(Xtr, ytr, fold_cfg)
            ref = build_reference(e, Xtr, ytr)
            suite = DetectorSuite(e, ref, wide=cfg.wide)
            if "iforest" in cfg.detectors:
                suite.iforest = fit_iforest(Xtr, seed=int(_rng(cfg.seed, fold, _TASK_IFOREST).integers(2**31)))
            sets = build_adv_sets(e, Xte, yte, cfg.n_attacks, _rng(cfg.seed, fold, _TASK_ATTACK), cfg.ratio)
            for kind in KINDS:
                es = sets[kind]
                results.dropped.append((ds.name, model_name, kind, fold, es.n_dropped))
                for det in cfg.detectors:
                    t0 = time.perf_counter()
                    scores = suite.score(det, es.X)
                    times[det].append((time.perf_counter() - t0) / len(es.X) * 1e3)
                    results.auc.append((ds.name, model_name, det, kind, fold, roc_auc(scores, es.is_adv)))
                    pooled[(det, kind)][0].append(scores)
                    pooled[(det, kind)][1].append(es.is_adv)
                for frac, auc, ms in refset_sweep(e, ref, es, cfg.fractions, _rng(cfg.seed, fold, _TASK_SWEEP), cfg.wide):
                    sweep[kind].append((frac, auc, ms))
                adv_d, rand_d = adv_vs_random_distributions(e, es.attacks, _rng(cfg.seed, fold, _TASK_RANDOM))
                results.advrand.append(
                    (ds.name, model_name, kind, fold, float(adv_d.mean()), float(rand_d.mean()))
                )
        for (det, kind), (s_list, a_list) in pooled.items():
            for p in coverage_detection_curve(np.concatenate(s_list), np.concatenate(a_list)):
                results.curves.append((ds.name, model_name, det, kind, p.threshold, p.coverage, p.detection_rate))
        for det, ts in times.items():
            results.timings.append((ds.name, model_name, det, float(np.mean(ts)), float(np.std(ts))))
        for kind, rows in sweep.items():
            for frac in cfg.fractions:
                sel = [r for r in rows if r[0] == float(frac)]
                results.refsweep.append(
                    (ds.name, model_name, kind, float(frac),
                     float(np.mean([r[1] for r in sel])), float(np.mean([r[2] for r in sel])))
                )
    return results


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("-inf" if v < 0 else "inf")
    return str(v)


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_results(results: EvalResults, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [
        ("auc.csv", ["dataset", "model", "detector", "adv_kind", "fold", "auc"], results.auc),
        ("curve.csv", ["dataset", "model", "detector", "adv_kind", "threshold", "coverage", "detection_rate"],
         results.curves),
        ("timings.csv", ["dataset", "model", "detector", "mean_ms", "std_ms"], results.timings),
        ("refsweep.csv", ["dataset", "model", "adv_kind", "fraction", "auc", "mean_ms"], results.refsweep),
        ("advrand.csv", ["dataset", "model", "adv_kind", "fold", "adv_mean", "random_mean"], results.advrand),
    ]
    paths = []
    for name, header, rows in files:
        _write_csv(out / name, header, rows)
        paths.append(out / name)
    return paths
