"""``ocshield`` command-line interface.

Every failure exits nonzero with one line on stderr::

    error: <code>: <message>
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .attack import BUDGET2X, BUDGET5X, CLOSEST, DEFAULT_CAP, KINDS, budgeted_adversarial, closest_adversarial
from .attack import count_feasible, median_delta
from .detectors import DETECTORS, DetectorSuite, fit_iforest, parse_detector_list
from .errors import NoAdversarialExists, OcShieldError
from .harness import (
    BUILTIN_DATASETS,
    DEFAULT_MODELS,
    EvalConfig,
    EvalResults,
    evaluate_dataset,
    load_csv_dataset,
    make_dataset,
    read_feature_csv,
    write_results,
)
from .model import LeafBox, load_model, save_model
from .ocspace import ReferenceSet, batch_oc_scores, build_reference
from .trainer import BOOSTING, FOREST, TrainConfig, train


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return n


def _nonneg(v):
    n = int(v)
    if n < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return n


def _positive_float(v):
    x = float(v)
    if not x > 0 or not np.isfinite(x):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return x


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--no-simd", action="store_true", default=argparse.SUPPRESS,
                        help="force the scalar OC-score kernel")

    p = _Parser(prog="ocshield", description="OC-score adversarial example detection for tree ensembles.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train an ensemble on a labelled CSV")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--mode", choices=(BOOSTING, FOREST), default=BOOSTING)
    t.add_argument("--trees", type=_positive, default=20)
    t.add_argument("--depth", type=_nonneg, default=4)
    t.add_argument("--learning-rate", type=_positive_float, default=0.3)
    t.add_argument("--min-samples-leaf", type=_positive, default=1)
    t.add_argument("--seed", type=_nonneg, default=0)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--refset-out", type=Path, help="also write the training reference set")

    s = sub.add_parser("score", parents=[common], help="score examples with one or more detectors")
    s.add_argument("--model", required=True, type=Path)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--refset", type=Path)
    g.add_argument("--train-data", type=Path)
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--detectors", default="ocscore")
    s.add_argument("--seed", type=_nonneg, default=0, help="isolation forest seed")
    s.add_argument("--out", type=Path)

    a = sub.add_parser("attack", parents=[common], help="exact adversarial examples for every input row")
    a.add_argument("--model", required=True, type=Path)
    a.add_argument("--input", required=True, type=Path)
    a.add_argument("--kind", choices=KINDS, default=CLOSEST)
    a.add_argument("--budget", type=_positive_float,
                   help="reference distance for x2/x5 (default: median closest distance over the input)")
    a.add_argument("--domain", choices=("unit", "unbounded"), default="unit")
    a.add_argument("--cap", type=_positive, default=DEFAULT_CAP)
    a.add_argument("--out", type=Path)
    a.add_argument("--witness", type=Path, help="perturbed inputs CSV (default: <out>.witness.csv)")

    c = sub.add_parser("count-ocs", parents=[common], help="count feasible output configurations")
    c.add_argument("--model", required=True, type=Path)
    c.add_argument("--cap", type=_positive, default=DEFAULT_CAP)

    e = sub.add_parser("evaluate", parents=[common], help="run the desk-scale detection benchmark")
    e.add_argument("--dataset", required=True, help=f"one of {', '.join(BUILTIN_DATASETS)} or a labelled CSV")
    e.add_argument("--folds", type=_positive, default=5)
    e.add_argument("--seed", type=_nonneg, default=0)
    e.add_argument("--out-dir", required=True, type=Path)
    e.add_argument("--n-attacks", type=_positive, default=100)
    e.add_argument("--n-samples", type=_positive, default=4000)
    e.add_argument("--models", default=",".join(DEFAULT_MODELS))
    e.add_argument("--detectors", default=",".join(DETECTORS))

    b = sub.add_parser("bench", parents=[common], help="per-query scan time, SIMD vs scalar")
    b.add_argument("--model", required=True, type=Path)
    b.add_argument("--refset", required=True, type=Path)
    b.add_argument("--queries", type=_positive, default=1000)
    b.add_argument("--runs", type=_positive, default=5)
    b.add_argument("--seed", type=_nonneg, default=0)
    return p


def _require_files(*paths):
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f"no such file: {path}")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def cmd_train(args):
    _require_files(args.data)
    cfg = TrainConfig(args.trees, args.depth, args.learning_rate, args.mode, args.seed, args.min_samples_leaf)
    cfg.validate()
    ds = load_csv_dataset(args.data)
    e = train(ds.X, ds.y, cfg)
    save_model(e, args.out)
    if args.refset_out is not None:
        build_reference(e, ds.X, ds.y).save(args.refset_out)
    acc = float(np.mean(e.predict(ds.X) == ds.y))
    print(f"trained {e.n_trees} trees, training accuracy {acc:.4f}")


def cmd_score(args):
    _require_files(args.model, args.refset, args.train_data, args.input)
    names = parse_detector_list(args.detectors)
    e = load_model(args.model)
    X, _, _ = read_feature_csv(args.input)
    X = e.check_input(X)
    suite = DetectorSuite(e, wide=args.wide, names=names)
    if args.refset is not None:
        suite.reference = ReferenceSet.load(args.refset)
        if suite.reference.n_trees != e.n_trees:
            raise ValueError(f"reference set has {suite.reference.n_trees} trees, model has {e.n_trees}")
        if "iforest" in names:
            raise ValueError("iforest needs --train-data")
    else:
        Xt, yt, _ = read_feature_csv(args.train_data, require_label=True)
        Xt = e.check_input(Xt)
        suite.reference = build_reference(e, Xt, yt)
        if "iforest" in names:
            suite.iforest = fit_iforest(Xt, seed=args.seed)
    cols = [suite.score(n, X) for n in names]
    pred = e.predict(X)
    # OC-scores are Hamming distances; keep them integral in the CSV
    cols = [c.astype(np.int64) if n == "ocscore" else c.astype(np.float64) for n, c in zip(names, cols)]
    rows = [[i, int(pred[i])] + [c[i].item() for c in cols] for i in range(len(X))]
    _emit(_csv_text(["example_id", "predicted_label", *names], rows), args.out)


def cmd_attack(args):
    _require_files(args.model, args.input)
    e = load_model(args.model)
    X, _, names = read_feature_csv(args.input)
    X = e.check_input(X)
    if args.domain == "unit":
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("input lies outside [0, 1]; normalize it or pass --domain unbounded")
        domain = LeafBox.unit(e.n_features)
    else:
        domain = LeafBox.unbounded(e.n_features)

    results, dropped = [], 0
    if args.kind == CLOSEST or args.budget is None:
        closest = {}
        for i, x in enumerate(X):
            try:
                closest[i] = closest_adversarial(e, x, domain, args.cap)
            except NoAdversarialExists:
                pass
    if args.kind == CLOSEST:
        results = sorted(closest.items())
        dropped = len(X) - len(results)
    else:
        if args.budget is None:
            delta = median_delta(list(closest.values()))
        else:
            delta = args.budget
        budget = (2.0 if args.kind == BUDGET2X else 5.0) * delta
        for i, x in enumerate(X):
            try:
                results.append((i, budgeted_adversarial(e, x, budget, domain, args.kind, args.cap)))
            except NoAdversarialExists:
                dropped += 1

    rows = []
    for i, a in results:
        p = float(e.prob_from_raw(a.raw_output))
        rows.append([i, a.kind, a.linf, a.l0, a.source_label, p])
    _emit(_csv_text(["example_id", "kind", "linf", "l0", "source_label", "flipped_prob"], rows), args.out)
    witness = args.witness
    if witness is None and args.out is not None:
        witness = args.out.with_suffix(".witness.csv")
    if witness is not None:
        wrows = [[i, *map(float, a.perturbed)] for i, a in results]
        witness.write_text(_csv_text(["example_id", *names], wrows), encoding="utf-8")
    if args.out is not None:
        print(f"attacked {len(results)} of {len(X)} rows, {dropped} without an adversarial example")


def cmd_count_ocs(args):
    _require_files(args.model)
    print(count_feasible(load_model(args.model), cap=args.cap))


def cmd_evaluate(args):
    if args.dataset in BUILTIN_DATASETS:
        ds = make_dataset(args.dataset, args.n_samples, args.seed)
    else:
        _require_files(args.dataset)
        ds = load_csv_dataset(args.dataset)
    model_names = [m.strip() for m in args.models.split(",") if m.strip()]
    unknown = [m for m in model_names if m not in DEFAULT_MODELS]
    if unknown or not model_names:
        raise ValueError(f"unknown models {unknown}; choose from {', '.join(DEFAULT_MODELS)}")
    cfg = EvalConfig(
        folds=args.folds,
        seed=args.seed,
        n_attacks=args.n_attacks,
        n_samples=args.n_samples,
        detectors=parse_detector_list(args.detectors),
        models={m: DEFAULT_MODELS[m] for m in model_names},
        wide=args.wide,
    )
    res = evaluate_dataset(ds, cfg, EvalResults())
    for path in write_results(res, args.out_dir):
        print(path)


def _median_ms(fn, runs, n):
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) / n * 1e3


def cmd_bench(args):
    _require_files(args.model, args.refset)
    e = load_model(args.model)
    r = ReferenceSet.load(args.refset)
    if r.n_trees != e.n_trees:
        raise ValueError(f"reference set has {r.n_trees} trees, model has {e.n_trees}")
    rng = np.random.default_rng(args.seed)
    ocs = np.column_stack([rng.integers(0, c, args.queries) for c in e.leaf_counts]).astype(np.uint8)
    labels = rng.choice(sorted(r.blocks), size=args.queries)
    simd = _median_ms(lambda: batch_oc_scores(r, ocs, labels, True), args.runs, args.queries)
    scalar = _median_ms(lambda: batch_oc_scores(r, ocs, labels, False), args.runs, args.queries)
    print(_csv_text(
        ["backend", "padded_rows", "trees", "queries", "simd_ms", "scalar_ms", "speedup"],
        [[kernels.BACKEND, r.padded_rows, r.n_trees, args.queries, simd, scalar, scalar / simd]],
    ), end="")


COMMANDS = {
    "train": cmd_train,
    "score": cmd_score,
    "attack": cmd_attack,
    "count-ocs": cmd_count_ocs,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def _one_line(msg) -> str:
    return " ".join(str(msg).split())


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.wide = not getattr(args, "no_simd", False)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: usage: {_one_line(exc)}", file=sys.stderr)
        return 2
    except OcShieldError as exc:
        print(f"error: {exc.code}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file_not_found: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io_error: {_one_line(exc)}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid_value: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
