"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Selected automatically when the extension is not built.  Results are
identical to the compiled kernels; only speed differs.
"""

import numpy as np

BACKEND = "python"

_LANES = 32


def have_wide():
    # numpy evaluates whole 32-row blocks at once
    return True


def _scan_blocked(block, oc):
    # 32-lane byte accumulators, folded into a running byte minimum
    m_trees, n_rows = block.shape
    acc = np.full(_LANES, 255, dtype=np.uint8)
    lanes = block.reshape(m_trees, n_rows // _LANES, _LANES)
    sums = np.zeros((n_rows // _LANES, _LANES), dtype=np.uint8)
    for m in range(m_trees):
        sums += lanes[m] != oc[m]
    np.minimum(acc, sums.min(axis=0), out=acc)
    return int(acc.min())


def _scan_rows(block, oc):
    best = 255
    for r in range(block.shape[1]):
        d = int(np.count_nonzero(block[:, r] != oc))
        if d < best:
            best = d
    return best


def scan_min(block, oc, wide=True):
    block = np.asarray(block, dtype=np.uint8)
    oc = np.asarray(oc, dtype=np.uint8)
    if block.shape[1] == 0:
        raise ValueError("empty reference block")
    if oc.shape[0] != block.shape[0]:
        raise ValueError("query length does not match block")
    if wide and block.shape[1] % _LANES == 0:
        return _scan_blocked(block, oc)
    return _scan_rows(block, oc)


def scan_min_batch(block, ocs, out, wide=True):
    if len(out) != len(ocs):
        raise ValueError("output length mismatch")
    for q in range(len(ocs)):
        out[q] = scan_min(block, ocs[q], wide)


def leaf_paths(feature, threshold, left, right, leaf_id, roots, X, out):
    n = X.shape[0]
    rows = np.arange(n)
    for m, root in enumerate(roots):
        node = np.full(n, root, dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            idx = node[active]
            go_left = X[rows[active], feature[idx]] < threshold[idx]
            node[active] = np.where(go_left, left[idx], right[idx])
            active = feature[node] >= 0
        out[:, m] = leaf_id[node]


def expand_children(LO, HI, VAL, off, k, lo, hi, x, radius, sign):
    seg = slice(off[k], off[k + 1])
    nlo = np.maximum(LO[seg], lo)
    nhi = np.minimum(HI[seg], hi)
    ok = np.all(nlo < nhi, axis=1)
    dist = np.maximum(np.maximum(nlo - x, x - nhi), 0.0).max(axis=1)
    ok &= dist <= radius
    idx = np.flatnonzero(ok)
    clo, chi = nlo[idx], nhi[idx]
    if k + 1 >= len(off) - 1 or idx.size == 0:
        return idx, clo, chi, dist[idx], np.zeros(idx.size)
    R = slice(off[k + 1], None)
    rlo = np.maximum(LO[R][None, :, :], clo[:, None, :])
    rhi = np.minimum(HI[R][None, :, :], chi[:, None, :])
    ok2 = np.all(rlo < rhi, axis=2)
    if np.isfinite(radius):
        ok2 &= np.all(np.maximum(np.maximum(rlo - x, x - rhi), 0.0) <= radius, axis=2)
    vals = np.where(ok2, sign * VAL[R][None, :], -np.inf)
    best = np.maximum.reduceat(vals, np.asarray(off[k + 1 : -1]) - off[k + 1], axis=1)
    rest = np.zeros(idx.size)
    for t in range(best.shape[1]):  # sequential, matching the compiled kernel
        rest += best[:, t]
    return idx, clo, chi, dist[idx], rest
