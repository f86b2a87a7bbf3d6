"""Exact adversarial examples by search over feasible output configurations.

Every output configuration corresponds to the intersection of one leaf box per
tree; it is feasible iff that intersection is non-empty.  The searches below
fix one tree at a time (fewest leaves first), carry the running
intersection, and prune with two bounds:

* distance: the closed L-infinity distance from ``x`` to the running box can
  only grow as more trees are fixed;
* output: the best total still reachable is the partial sum plus, for every
  remaining tree, the best leaf value among leaves compatible with the box.

Distances are infima over the half-open boxes.  Witness points are clamped
strictly inside the box, so a witness may sit one float step further away
than the reported distance when it lands just below an open upper bound.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import kernels
from .errors import EmptyList, EnumerationCapExceeded, NoAdversarialExists
from .model import AVERAGE_PROB, Ensemble, LeafBox, clamp_into, closed_distance, evaluate

DEFAULT_CAP = 10**7

CLOSEST = "closest"
BUDGET2X = "x2"
BUDGET5X = "x5"
KINDS = (CLOSEST, BUDGET2X, BUDGET5X)


@dataclass(frozen=True, eq=False)
class FeasibleOC:
    oc: np.ndarray
    box: LeafBox
    raw_output: float


@dataclass(frozen=True, eq=False)
class AdversarialExample:
    original: np.ndarray
    perturbed: np.ndarray
    linf: float
    l0: int
    source_label: int
    kind: str
    oc: np.ndarray
    raw_output: float
    distance: float

    @classmethod
    def build(cls, e: Ensemble, x, oc, lo, hi, kind, source_label):
        w = clamp_into(lo, hi, x)
        raw = float(e.raw_from_ocs(oc)[0])
        return cls(
            original=x,
            perturbed=w,
            linf=float(np.max(np.abs(w - x), initial=0.0)),
            l0=int(np.count_nonzero(w != x)),
            source_label=int(source_label),
            kind=kind,
            oc=np.asarray(oc, dtype=np.uint8),
            raw_output=raw,
            distance=float(closed_distance(lo, hi, x).max(initial=0.0)),
        )


class _Search:
    """Leaf boxes of an ensemble laid out for the depth-first searches."""

    def __init__(self, e: Ensemble, domain: LeafBox | None = None):
        self.e = e
        self.d = e.n_features
        self.order = np.argsort(e.leaf_counts, kind="stable")
        los, his, vals = [], [], []
        for m in self.order:
            lo, hi = e.trees[m].box_arrays(self.d)
            los.append(lo)
            his.append(hi)
            vals.append(e.trees[m].leaf_values)
        self.LO = np.vstack(los)
        self.HI = np.vstack(his)
        self.VAL = np.concatenate(vals)
        self.off = np.concatenate([[0], np.cumsum([len(v) for v in vals])]).astype(np.int64)
        self.M = e.n_trees
        if domain is None:
            domain = LeafBox.unbounded(self.d)
        self.dom_lo = np.asarray(domain.lo, dtype=np.float64)
        self.dom_hi = np.asarray(domain.hi, dtype=np.float64)
        # label 1 iff sum of leaf values >= cut_sum
        if e.aggregation == AVERAGE_PROB:
            self.cut_sum = 0.5 * self.M
        else:
            self.cut_sum = -e.base_score
        self.tol = 1e-12 * (1.0 + np.abs(self.VAL).sum() + abs(self.cut_sum))
        self.nodes = 0

    def oc_in_tree_order(self, chosen) -> np.ndarray:
        oc = np.empty(self.M, dtype=np.uint8)
        oc[self.order] = chosen
        return oc

    def children(self, k, lo, hi):
        """Non-empty intersections of the running box with tree k's leaves."""
        seg = slice(self.off[k], self.off[k + 1])
        nlo = np.maximum(self.LO[seg], lo)
        nhi = np.minimum(self.HI[seg], hi)
        return np.flatnonzero(np.all(nlo < nhi, axis=1)), nlo, nhi

    def tick(self, cap):
        self.nodes += 1
        if self.nodes > cap:
            raise EnumerationCapExceeded(f"search visited more than {cap} nodes")

    def enumerate(self, within: LeafBox | None, cap: int) -> Iterator[FeasibleOC]:
        lo = self.dom_lo.copy()
        hi = self.dom_hi.copy()
        if within is not None:
            lo = np.maximum(lo, within.lo)
            hi = np.minimum(hi, within.hi)
        if np.any(lo >= hi):
            return
        chosen = np.zeros(self.M, dtype=np.int64)
        emitted = 0
        # explicit stack of (level, lo, hi); chosen[level-1] set on push
        stack = [(0, lo, hi, None)]
        while stack:
            k, lo, hi, leaf = stack.pop()
            if leaf is not None:
                chosen[k - 1] = leaf
            if k == self.M:
                emitted += 1
                if emitted > cap:
                    raise EnumerationCapExceeded(f"more than {cap} feasible output configurations")
                oc = self.oc_in_tree_order(chosen)
                yield FeasibleOC(oc, LeafBox(lo, hi), float(self.e.raw_from_ocs(oc)[0]))
                continue
            idx, nlo, nhi = self.children(k, lo, hi)
            for j in idx[::-1]:
                stack.append((k + 1, nlo[j], nhi[j], j))

    def find_any(self, x, target: int, radius: float, cap: int):
        """Depth-first search for any configuration labelled ``target`` within ``radius``.

        Children are tried in order of decreasing output bound and cut when
        the bound cannot reach the decision threshold.  Returns
        ``(oc, lo, hi)`` or None.
        """
        lo0 = self.dom_lo.copy()
        hi0 = self.dom_hi.copy()
        if np.any(lo0 >= hi0) or closed_distance(lo0, hi0, x).max(initial=0.0) > radius:
            return None
        sign = 1.0 if target == 1 else -1.0
        floor = sign * self.cut_sum - self.tol
        stack = [(0, lo0, hi0, 0.0, ())]
        while stack:
            k, lo, hi, partial, chosen = stack.pop()
            self.tick(cap)
            if k == self.M:
                oc = self.oc_in_tree_order(chosen)
                if self.e.label_from_raw(self.e.raw_from_ocs(oc))[0] == target:
                    return oc, lo, hi
                continue
            idx, clo, chi, dist, rest = kernels.expand_children(
                self.LO, self.HI, self.VAL, self.off, k, lo, hi, x, radius, sign
            )
            vals = partial + sign * self.VAL[self.off[k] + idx]
            bounds = vals + rest
            keep = np.flatnonzero(bounds >= floor)
            # pushed worst first so the best bound is popped next
            for i in keep[np.argsort(bounds[keep], kind="stable")]:
                stack.append((k + 1, clo[i], chi[i], vals[i], chosen + (int(idx[i]),)))
        return None

    def best_first(self, x, target: int, radius: float, cap: int):
        """Most extreme configuration labelled ``target`` within ``radius``.

        States are expanded in order of (-output bound, distance to x).  The
        key is admissible because a child's distance never decreases and its
        output bound never increases, so the first complete flipped state has
        the most extreme output.  States whose key ties with it (up to
        summation rounding) are then drained, and the winner is the one with
        the most extreme output, then the smallest distance, then the
        lexicographically smallest configuration.
        Returns ``(oc, lo, hi)`` or None.
        """
        lo0 = self.dom_lo.copy()
        hi0 = self.dom_hi.copy()
        if np.any(lo0 >= hi0):
            return None
        d0 = float(closed_distance(lo0, hi0, x).max(initial=0.0))
        if d0 > radius:
            return None
        sign = 1.0 if target == 1 else -1.0
        floor = sign * self.cut_sum - self.tol
        counter = itertools.count()
        heap = [((-math.inf, d0, 1), next(counter), 0, lo0, hi0, 0.0, ())]
        first = None
        found = []
        while heap:
            key, _, k, lo, hi, partial, chosen = heapq.heappop(heap)
            if first is not None:
                if -key[0] < first[0] - self.tol:
                    break
                if key[1] > first[1]:
                    continue
            self.tick(cap)
            if k == self.M:
                oc = self.oc_in_tree_order(chosen)
                raw = float(self.e.raw_from_ocs(oc)[0])
                if self.e.label_from_raw(raw) == target:
                    if first is None:
                        first = (-key[0], key[1])
                    found.append(((-sign * raw, key[1], tuple(oc.tolist())), oc, lo, hi))
                continue
            idx, clo, chi, dist, rest = kernels.expand_children(
                self.LO, self.HI, self.VAL, self.off, k, lo, hi, x, radius, sign
            )
            vals = partial + sign * self.VAL[self.off[k] + idx]
            bounds = vals + rest
            for i in np.flatnonzero(bounds >= floor):
                # deeper states first among equal keys: reaches complete states sooner
                heapq.heappush(heap, ((-bounds[i], dist[i], -k), next(counter), k + 1, clo[i], chi[i], vals[i],
                                      chosen + (int(idx[i]),)))
        if not found:
            return None
        _, oc, lo, hi = min(found, key=lambda c: c[0])
        return oc, lo, hi


def _domain(e: Ensemble, domain: LeafBox | None) -> LeafBox:
    return LeafBox.unit(e.n_features) if domain is None else domain


def enumerate_feasible(e: Ensemble, within: LeafBox | None = None, cap: int = DEFAULT_CAP) -> Iterator[FeasibleOC]:
    """Stream every feasible output configuration (optionally inside ``within``) once."""
    return _Search(e).enumerate(within, cap)


def count_feasible(e: Ensemble, cap: int = DEFAULT_CAP) -> int:
    return sum(1 for _ in enumerate_feasible(e, cap=cap))


def _split_distances(e: Ensemble, x, domain: LeafBox) -> np.ndarray:
    """Every per-feature gap between x and a split threshold or finite domain bound."""
    cands = [np.zeros(1)]
    for t in e.trees:
        internal = t.feature >= 0
        xf = x[t.feature[internal]]
        thr = t.threshold[internal]
        cands.append(np.where(thr > xf, thr - xf, xf - thr))
    for b in (domain.lo, domain.hi):
        fin = np.isfinite(b)
        cands.append(np.abs(b[fin] - x[fin]))
    return np.unique(np.concatenate(cands))


def closest_adversarial(e: Ensemble, x, domain: LeafBox | None = None, cap: int = DEFAULT_CAP) -> AdversarialExample:
    """L-infinity closest input inside ``domain`` whose predicted label differs from x's.

    The optimal distance is one of the gaps between x and a split threshold
    (or a domain bound) along some feature, so those gaps are binary-searched
    with an exact existence test at each radius.  Restricting the search to
    the radius keeps the output bounds tight.
    """
    x = e.check_input(np.asarray(x, dtype=np.float64)[None, :])[0]
    domain = _domain(e, domain)
    source = evaluate(e, x)[2]
    s = _Search(e, domain)

    def decide(radius):
        return s.find_any(x, 1 - source, radius, cap)

    found = decide(math.inf)
    if found is None:
        raise NoAdversarialExists("no feasible output configuration flips the prediction")
    cands = _split_distances(e, x, domain)

    def index_of(res):
        d = float(closed_distance(res[1], res[2], x).max(initial=0.0))
        return int(np.searchsorted(cands, d, side="right")) - 1

    lo_i, hi_i = 0, index_of(found)
    while lo_i < hi_i:
        mid = (lo_i + hi_i) // 2
        res = decide(float(cands[mid]))
        if res is None:
            lo_i = mid + 1
        else:
            found, hi_i = res, min(mid, index_of(res))
    oc, lo, hi = found
    return AdversarialExample.build(e, x, oc, lo, hi, CLOSEST, source)


def budgeted_adversarial(
    e: Ensemble,
    x,
    budget: float,
    domain: LeafBox | None = None,
    kind: str = BUDGET2X,
    cap: int = DEFAULT_CAP,
) -> AdversarialExample:
    """Most confident wrong-class configuration within L-infinity distance ``budget``.

    Ties go to the closer configuration, then to the lexicographically
    smaller one.
    """
    if not budget > 0:
        raise ValueError("budget must be positive")
    x = e.check_input(np.asarray(x, dtype=np.float64)[None, :])[0]
    domain = _domain(e, domain)
    source = evaluate(e, x)[2]
    found = _Search(e, domain).best_first(x, 1 - source, float(budget), cap)
    if found is None:
        raise NoAdversarialExists(f"no adversarial example within distance {budget}")
    oc, lo, hi = found
    return AdversarialExample.build(e, x, oc, lo, hi, kind, source)


def median_delta(attacks) -> float:
    """Median L-infinity size of a list of (closest) attacks."""
    values = [a.linf for a in attacks]
    if not values:
        raise EmptyList("median of an empty attack list")
    return float(np.median(values))
