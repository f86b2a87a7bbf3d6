# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: OC-score scan (AVX2 and scalar) and batched tree traversal."""

from libc.stdint cimport uint8_t, int32_t, int64_t

cdef extern from "_scan.h":
    int ocs_scan_scalar(const uint8_t *mat, size_t n_rows, size_t m_trees, const uint8_t *oc) nogil
    int ocs_scan_avx2(const uint8_t *mat, size_t n_rows, size_t m_trees, const uint8_t *oc) nogil
    int ocs_cpu_has_avx2() nogil

BACKEND = "compiled"

cdef bint _AVX2 = ocs_cpu_has_avx2()


def have_wide():
    """True when the CPU supports the 32-lane AVX2 scan."""
    return bool(_AVX2)


def scan_min(const uint8_t[:, ::1] block, const uint8_t[::1] oc, bint wide=True):
    """Minimum Hamming distance between ``oc`` and the rows of ``block``.

    ``block`` has shape (M, n_rows): row m is column m of the reference matrix.
    """
    cdef size_t m_trees = block.shape[0]
    cdef size_t n_rows = block.shape[1]
    cdef int res
    if n_rows == 0:
        raise ValueError("empty reference block")
    if <size_t>oc.shape[0] != m_trees:
        raise ValueError("query length does not match block")
    with nogil:
        if wide and _AVX2 and n_rows % 32 == 0:
            res = ocs_scan_avx2(&block[0, 0], n_rows, m_trees, &oc[0])
        else:
            res = ocs_scan_scalar(&block[0, 0], n_rows, m_trees, &oc[0])
    return res


def scan_min_batch(const uint8_t[:, ::1] block, const uint8_t[:, ::1] ocs,
                   int32_t[::1] out, bint wide=True):
    """Fill ``out[q]`` with the scan minimum of query row ``ocs[q]``."""
    cdef size_t m_trees = block.shape[0]
    cdef size_t n_rows = block.shape[1]
    cdef Py_ssize_t q, n_q = ocs.shape[0]
    cdef bint use_wide = wide and _AVX2 and n_rows % 32 == 0
    if n_rows == 0:
        raise ValueError("empty reference block")
    if n_q and <size_t>ocs.shape[1] != m_trees:
        raise ValueError("query length does not match block")
    if out.shape[0] != n_q:
        raise ValueError("output length mismatch")
    with nogil:
        for q in range(n_q):
            if use_wide:
                out[q] = ocs_scan_avx2(&block[0, 0], n_rows, m_trees, &ocs[q, 0])
            else:
                out[q] = ocs_scan_scalar(&block[0, 0], n_rows, m_trees, &ocs[q, 0])


def leaf_paths(const int32_t[::1] feature, const double[::1] threshold,
               const int32_t[::1] left, const int32_t[::1] right,
               const int32_t[::1] leaf_id, const int64_t[::1] roots,
               const double[:, ::1] X, uint8_t[:, ::1] out):
    """Route every row of ``X`` through every tree of a packed ensemble.

    Nodes of all trees live in shared arrays; ``roots[m]`` is the index of
    tree m's root and child indices are absolute.  Leaves have feature -1.
    """
    cdef Py_ssize_t i, m, node
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_trees = roots.shape[0]
    with nogil:
        for i in range(n):
            for m in range(n_trees):
                node = roots[m]
                while feature[node] >= 0:
                    if X[i, feature[node]] < threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                out[i, m] = <uint8_t>leaf_id[node]


from libc.math cimport INFINITY
import numpy as np


def expand_children(const double[:, ::1] LO, const double[:, ::1] HI, const double[::1] VAL,
                    const int64_t[::1] off, Py_ssize_t k, const double[::1] lo, const double[::1] hi,
                    const double[::1] x, double radius, double sign):
    """Children of a search state at tree level k (trees in search order).

    For each leaf of tree k whose box meets the state box within closed
    distance ``radius`` of x, returns the leaf index, the intersected box,
    its distance to x and an upper bound of ``sign * sum`` over the trees
    after k.
    """
    cdef Py_ssize_t d = LO.shape[1]
    cdef Py_ssize_t n_trees = off.shape[0] - 1
    cdef Py_ssize_t a = off[k], b = off[k + 1]
    cdef Py_ssize_t i, j, f, t, c, n_ok = 0
    cdef double l, h, dd, dist, tree_best, total, v
    cdef bint ok
    idx_np = np.empty(b - a, dtype=np.int64)
    clo_np = np.empty((b - a, d))
    chi_np = np.empty((b - a, d))
    dist_np = np.empty(b - a)
    rest_np = np.zeros(b - a)
    cdef int64_t[::1] idx = idx_np
    cdef double[:, ::1] clo = clo_np
    cdef double[:, ::1] chi = chi_np
    cdef double[::1] cdist = dist_np
    cdef double[::1] rest = rest_np
    cdef bint finite_r = radius < INFINITY
    with nogil:
        for i in range(a, b):
            ok = True
            dist = 0.0
            for f in range(d):
                l = LO[i, f] if LO[i, f] > lo[f] else lo[f]
                h = HI[i, f] if HI[i, f] < hi[f] else hi[f]
                if not l < h:
                    ok = False
                    break
                dd = l - x[f]
                if x[f] - h > dd:
                    dd = x[f] - h
                if dd > dist:
                    dist = dd
                clo[n_ok, f] = l
                chi[n_ok, f] = h
            if not ok or dist > radius:
                continue
            idx[n_ok] = i - a
            cdist[n_ok] = dist
            total = 0.0
            for t in range(k + 1, n_trees):
                tree_best = -INFINITY
                for j in range(off[t], off[t + 1]):
                    v = sign * VAL[j]
                    if v <= tree_best:
                        continue
                    ok = True
                    for f in range(d):
                        l = LO[j, f] if LO[j, f] > clo[n_ok, f] else clo[n_ok, f]
                        h = HI[j, f] if HI[j, f] < chi[n_ok, f] else chi[n_ok, f]
                        if not l < h:
                            ok = False
                            break
                        if finite_r and (l - x[f] > radius or x[f] - h > radius):
                            ok = False
                            break
                    if ok:
                        tree_best = v
                total += tree_best
                if total == -INFINITY:
                    break
            rest[n_ok] = total
            n_ok += 1
    return idx_np[:n_ok], clo_np[:n_ok], chi_np[:n_ok], dist_np[:n_ok], rest_np[:n_ok]
