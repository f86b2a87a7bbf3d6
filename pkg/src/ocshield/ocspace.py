"""OC-space: Hamming distances and the reference-set minimum scan.

A reference set stores, per predicted label, the output configurations of
correctly classified training examples as an (M, n_rows) uint8 array, i.e.
the n_rows x M reference matrix in column-major order.  Each per-label block
is padded to a multiple of 32 rows by repeating its first row, which leaves
every minimum unchanged.

Binary file layout (little endian)::

    magic   4s   b"OCRS"
    version u16  1
    M       u16  number of trees
    classes u16  always 2
    pad     u16  0
    then per class (0, 1): physical_rows u32, stored_rows u32
    then per class (0, 1): M * physical_rows bytes, column after column
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    BatchItemError,
    EmptyClassPartition,
    LengthMismatch,
    MalformedReferenceFile,
)
from .model import MAX_TREES, Ensemble

LANES = 32
MAGIC = b"OCRS"
VERSION = 1
_HEADER = struct.Struct("<4sHHHH")
_COUNTS = struct.Struct("<II")
LABELS = (0, 1)


def hamming(a, b) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"cannot compare configurations of shapes {a.shape} and {b.shape}")
    return int(np.count_nonzero(a != b))


def _as_oc(oc, n_trees: int) -> np.ndarray:
    oc = np.ascontiguousarray(oc, dtype=np.uint8)
    if oc.ndim != 1 or oc.shape[0] != n_trees:
        raise LengthMismatch(f"expected a configuration of length {n_trees}, got shape {oc.shape}")
    return oc


def padded_block(rows: np.ndarray) -> np.ndarray:
    """Column-major (M, n_phys) block of ``rows`` padded to a multiple of 32."""
    n = rows.shape[0]
    n_phys = -(-n // LANES) * LANES
    block = np.empty((rows.shape[1], n_phys), dtype=np.uint8)
    block[:, :n] = rows.T
    block[:, n:] = rows[0][:, None]
    return block


@dataclass(frozen=True, eq=False)
class ReferenceSet:
    n_trees: int
    blocks: dict
    stored_rows: dict
    source_index: np.ndarray | None = None

    @classmethod
    def from_rows(cls, rows, labels, source_index=None) -> ReferenceSet:
        rows = np.asarray(rows, dtype=np.uint8)
        labels = np.asarray(labels)
        if rows.ndim != 2:
            raise LengthMismatch("reference rows must form a matrix")
        if not 1 <= rows.shape[1] <= MAX_TREES:
            raise LengthMismatch(f"configurations must have 1..{MAX_TREES} trees")
        blocks, stored = {}, {}
        order = []
        for c in LABELS:
            idx = np.flatnonzero(labels == c)
            if idx.size == 0:
                raise EmptyClassPartition(f"no reference rows with label {c}")
            blocks[c] = padded_block(rows[idx])
            stored[c] = idx.size
            order.append(idx)
        src = None
        if source_index is not None:
            src = np.asarray(source_index)[np.concatenate(order)]
        return cls(rows.shape[1], blocks, stored, src)

    @property
    def physical_rows(self) -> dict:
        return {c: b.shape[1] for c, b in self.blocks.items()}

    @property
    def padded_rows(self) -> int:
        return sum(self.blocks[c].shape[1] - self.stored_rows[c] for c in self.blocks)

    @property
    def size(self) -> int:
        return sum(self.stored_rows.values())

    def block(self, label: int) -> np.ndarray:
        try:
            return self.blocks[int(label)]
        except KeyError:
            raise EmptyClassPartition(f"no reference partition for label {label}") from None

    def rows(self, label: int) -> np.ndarray:
        """Stored (unpadded) rows of one partition as an (n, M) view."""
        return self.block(label)[:, : self.stored_rows[int(label)]].T

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([np.full(self.stored_rows[c], c) for c in LABELS])

    @property
    def matrix(self) -> np.ndarray:
        """All stored rows, grouped by label, as a column-major (n, M) array."""
        return np.asfortranarray(np.vstack([self.rows(c) for c in LABELS]))

    def subsample(self, fraction: float, rng: np.random.Generator) -> ReferenceSet:
        """Keep a uniformly drawn ``fraction`` of each partition (at least one row)."""
        if not 0 < fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        rows, labels = [], []
        for c in LABELS:
            n = self.stored_rows[c]
            k = max(1, int(round(fraction * n)))
            keep = np.sort(rng.choice(n, size=k, replace=False)) if k < n else np.arange(n)
            rows.append(self.rows(c)[keep])
            labels.append(np.full(k, c))
        return ReferenceSet.from_rows(np.vstack(rows), np.concatenate(labels))

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, VERSION, self.n_trees, len(LABELS), 0)]
        for c in LABELS:
            parts.append(_COUNTS.pack(self.blocks[c].shape[1], self.stored_rows[c]))
        for c in LABELS:
            parts.append(self.blocks[c].tobytes(order="C"))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> ReferenceSet:
        if len(data) < _HEADER.size:
            raise MalformedReferenceFile("truncated header")
        magic, version, m, n_classes, _ = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise MalformedReferenceFile("bad magic")
        if version != VERSION:
            raise MalformedReferenceFile(f"unsupported version {version}")
        if n_classes != len(LABELS) or not 1 <= m <= MAX_TREES:
            raise MalformedReferenceFile("bad header fields")
        off = _HEADER.size
        counts = []
        for _ in LABELS:
            if len(data) < off + _COUNTS.size:
                raise MalformedReferenceFile("truncated row counts")
            phys, stored = _COUNTS.unpack_from(data, off)
            if phys % LANES or not 0 < stored <= phys:
                raise MalformedReferenceFile("inconsistent row counts")
            counts.append((phys, stored))
            off += _COUNTS.size
        if len(data) != off + sum(m * p for p, _ in counts):
            raise MalformedReferenceFile("payload size does not match header")
        blocks, stored_rows = {}, {}
        for c, (phys, stored) in zip(LABELS, counts):
            n = m * phys
            blocks[c] = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).reshape(m, phys).copy()
            stored_rows[c] = stored
            off += n
        return cls(m, blocks, stored_rows)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> ReferenceSet:
        return cls.from_bytes(Path(path).read_bytes())


def build_reference(e: Ensemble, X, y) -> ReferenceSet:
    """Reference set from the correctly classified rows of ``(X, y)``."""
    X = e.check_input(X)
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise LengthMismatch(f"{X.shape[0]} examples but {y.shape} labels")
    ocs = e.leaf_paths(X)
    pred = e.label_from_raw(e.raw_from_ocs(ocs))
    keep = np.flatnonzero(pred == y)
    return ReferenceSet.from_rows(ocs[keep], y[keep], source_index=keep)


def oc_score(r: ReferenceSet, oc, predicted_label: int) -> int:
    """Minimum Hamming distance to the partition of ``predicted_label`` (reference scan)."""
    block = r.block(predicted_label)
    oc = _as_oc(oc, r.n_trees)
    return int(np.count_nonzero(block != oc[:, None], axis=0).min())


def oc_score_simd(r: ReferenceSet, oc, predicted_label: int, wide: bool = True) -> int:
    """Same value as :func:`oc_score`, computed by the 32-lane kernel.

    ``wide=False`` forces the scalar kernel.
    """
    block = r.block(predicted_label)
    return int(kernels.scan_min(block, _as_oc(oc, r.n_trees), wide))


def n_workers() -> int:
    env = os.environ.get("OCSHIELD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def batch_oc_scores(r: ReferenceSet, ocs, labels, wide: bool = True, workers: int | None = None) -> np.ndarray:
    """Element-wise :func:`oc_score_simd`; order preserved."""
    if len(ocs) != len(labels):
        raise LengthMismatch(f"{len(ocs)} configurations but {len(labels)} labels")
    n = len(ocs)
    out = np.zeros(n, dtype=np.int32)
    if n == 0:
        return out
    try:
        Q = np.ascontiguousarray(ocs, dtype=np.uint8)
        if Q.ndim != 2:
            raise ValueError
    except ValueError:
        Q = None
    if Q is None or Q.shape[1] != r.n_trees:
        for i, oc in enumerate(ocs):
            if np.asarray(oc).shape != (r.n_trees,):
                raise BatchItemError(i, LengthMismatch(f"expected length {r.n_trees}"))
    labels = np.asarray(labels)
    for i, lab in enumerate(labels):
        if int(lab) not in r.blocks:
            raise BatchItemError(i, EmptyClassPartition(f"no reference partition for label {lab}"))
    workers = workers or n_workers()
    tasks = []
    for c in LABELS:
        idx = np.flatnonzero(labels == c)
        if idx.size:
            for chunk in np.array_split(idx, min(workers, idx.size)):
                tasks.append((c, chunk))

    def run(task):
        c, chunk = task
        res = np.empty(chunk.size, dtype=np.int32)
        kernels.scan_min_batch(r.blocks[c], np.ascontiguousarray(Q[chunk]), res, wide)
        out[chunk] = res

    if workers == 1 or len(tasks) == 1:
        for t in tasks:
            run(t)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, tasks))
    return out
