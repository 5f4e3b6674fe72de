"""Hot loops over rows and leaf boxes.

Each kernel exists twice: an explicit loop compiled with numba, and a
vectorized numpy version. The numpy version is used when numba is not
importable or when ``GENTREES_DISABLE_JIT=1`` is set in the environment.
Both versions are importable under ``*_numba`` / ``*_numpy`` names so the
test suite and the benchmark can compare them directly.

Box arrays follow the layout used by :mod:`gentrees.trees`: ``lo`` and ``hi``
of shape ``(B, d)`` holding half-open numeric intervals, and ``mask`` of shape
``(B, d, K)`` holding nominal subsets. ``kinds`` codes features as 0 real,
1 integer and 2 nominal.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_DISABLED = os.environ.get("GENTREES_DISABLE_JIT", "0").lower() in ("1", "true", "yes")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not JIT_DISABLED

JIT_OPTIONS = {"nogil": True, "cache": True}


def _jit(fn):
    if HAVE_NUMBA:
        return numba.njit(**JIT_OPTIONS)(fn)
    return fn


# ---------------------------------------------------------------- routing


@_jit
def route_rows_numba(feature, threshold, right_mask, left, right, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            v = X[i, feature[node]]
            if np.isnan(v):
                node = -1
                break
            t = threshold[node]
            if np.isnan(t):
                go_right = right_mask[node, int(v)]
            else:
                go_right = v >= t
            node = right[node] if go_right else left[node]
        out[i] = node
    return out


def route_rows_numpy(feature, threshold, right_mask, left, right, X):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = left[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        cur = node[idx]
        v = X[idx, feature[cur]]
        missing = np.isnan(v)
        t = threshold[cur]
        nominal = np.isnan(t)
        go_right = np.zeros(idx.size, dtype=bool)
        num = ~nominal & ~missing
        go_right[num] = v[num] >= t[num]
        nom = nominal & ~missing
        go_right[nom] = right_mask[cur[nom], v[nom].astype(np.int64)]
        nxt = np.where(go_right, right[cur], left[cur])
        nxt[missing] = -1
        node[idx] = nxt
        active[idx] = (nxt >= 0) & (left[np.maximum(nxt, 0)] >= 0)
    return node


def route_rows(feature, threshold, right_mask, left, right, X):
    """Leaf id reached by every row, or -1 when a tested value is missing."""
    fn = route_rows_numba if USE_NUMBA else route_rows_numpy
    return fn(feature, threshold, right_mask, left, right, np.ascontiguousarray(X, dtype=np.float64))


# ---------------------------------------------------------------- overlaps


@_jit
def overlap_fractions_numba(lo_a, hi_a, mask_a, lo_b, hi_b, mask_b, kinds, lengths):
    A, d = lo_a.shape
    B = lo_b.shape[0]
    K = mask_a.shape[2]
    out = np.empty((A, B), dtype=np.float64)
    for a in range(A):
        for b in range(B):
            frac = 1.0
            for j in range(d):
                if kinds[j] == 2:
                    both = 0
                    own = 0
                    for k in range(K):
                        if mask_a[a, j, k]:
                            own += 1
                            if mask_b[b, j, k]:
                                both += 1
                    frac *= both / own if own > 0 else 0.0
                elif lengths[j] == 0.0:
                    continue
                else:
                    width = hi_a[a, j] - lo_a[a, j]
                    inter = min(hi_a[a, j], hi_b[b, j]) - max(lo_a[a, j], lo_b[b, j])
                    if width <= 0.0 or inter <= 0.0:
                        frac = 0.0
                    else:
                        frac *= inter / width
                if frac == 0.0:
                    break
            out[a, b] = frac
    return out


def overlap_fractions_numpy(lo_a, hi_a, mask_a, lo_b, hi_b, mask_b, kinds, lengths):
    A, d = lo_a.shape
    B = lo_b.shape[0]
    out = np.ones((A, B))
    for j in range(d):
        if kinds[j] == 2:
            ma = mask_a[:, j, :].astype(np.float64)
            own = ma.sum(axis=1)
            both = ma @ mask_b[:, j, :].T.astype(np.float64)
            with np.errstate(invalid="ignore", divide="ignore"):
                out *= np.where(own[:, None] > 0, both / own[:, None], 0.0)
        elif lengths[j] == 0.0:
            continue
        else:
            width = (hi_a[:, j] - lo_a[:, j])[:, None]
            inter = np.minimum(hi_a[:, j][:, None], hi_b[:, j][None, :]) - np.maximum(
                lo_a[:, j][:, None], lo_b[:, j][None, :]
            )
            with np.errstate(invalid="ignore", divide="ignore"):
                out *= np.where((width > 0) & (inter > 0), inter / width, 0.0)
    return out


def overlap_fractions(lo_a, hi_a, mask_a, lo_b, hi_b, mask_b, kinds, lengths):
    """Matrix of vol(a ∩ b) / vol(a) for every pair of boxes (a from A, b from B)."""
    fn = overlap_fractions_numba if USE_NUMBA else overlap_fractions_numpy
    return fn(lo_a, hi_a, mask_a, lo_b, hi_b, mask_b, kinds, lengths)


# ---------------------------------------------------------------- imputation


@_jit
def select_impute_leaves_numba(X, lo, hi, mask, kinds, upper, weights, volumes):
    n, d = X.shape
    G = lo.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        best = -1
        best_dens = -1.0
        best_w = -1.0
        for g in range(G):
            ok = True
            for j in range(d):
                v = X[i, j]
                if np.isnan(v):
                    continue
                if kinds[j] == 2:
                    if not mask[g, j, int(v)]:
                        ok = False
                        break
                elif v < lo[g, j] or not (v < hi[g, j] or (v == hi[g, j] and hi[g, j] == upper[j])):
                    ok = False
                    break
            if not ok:
                continue
            dens = weights[g] / volumes[g] if volumes[g] > 0.0 else 0.0
            if dens > best_dens or (dens == best_dens and weights[g] > best_w):
                best = g
                best_dens = dens
                best_w = weights[g]
        out[i] = best
    return out


def select_impute_leaves_numpy(X, lo, hi, mask, kinds, upper, weights, volumes):
    n, d = X.shape
    G = lo.shape[0]
    ok = np.ones((n, G), dtype=bool)
    for j in range(d):
        v = X[:, j]
        present = ~np.isnan(v)
        if not present.any():
            continue
        vp = v[present]
        if kinds[j] == 2:
            inside = mask[:, j, :][:, vp.astype(np.int64)].T
        else:
            l, h = lo[None, :, j], hi[None, :, j]
            x = vp[:, None]
            inside = (x >= l) & ((x < h) | ((x == h) & (h == upper[j])))
        ok[present] &= inside
    with np.errstate(invalid="ignore", divide="ignore"):
        dens = np.where(volumes > 0, weights / volumes, 0.0)
    # lexicographic argmax on (density, weight, -index) among compatible leaves
    order = np.lexsort((np.arange(G)[::-1], weights, dens))[::-1]
    ranked = ok[:, order]
    first = np.argmax(ranked, axis=1)
    out = order[first].astype(np.int64)
    out[~ranked.any(axis=1)] = -1
    return out


def select_impute_leaves(X, lo, hi, mask, kinds, upper, weights, volumes):
    """Index of the compatible leaf of maximal density for every row (-1 if none)."""
    fn = select_impute_leaves_numba if USE_NUMBA else select_impute_leaves_numpy
    return fn(np.ascontiguousarray(X, dtype=np.float64), lo, hi, mask, kinds, upper, weights, volumes)
