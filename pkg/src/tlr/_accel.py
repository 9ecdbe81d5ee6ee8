"""Hot kernels with a numba path and a pure-numpy path.

Set ``TLR_DISABLE_NUMBA=1`` before import to force the numpy path. The
numpy path is also used when numba is not installed.
"""
import os

import numpy as np

_DISABLED = os.environ.get("TLR_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit
except ImportError:
    njit = None

USE_NUMBA = njit is not None

# distances this close (relative to the vectors' squared norms) count as ties,
# so the lowest-index rule does not hinge on rounding
TIE_RTOL = 1e-10

# queries per chunk in the numpy nearest-neighbour scan; bounds the q*n*k temporary
_NN_CHUNK = 64


def _np_entry_values(us, v, rows, cols):
    return np.einsum("ij,ij->i", us[rows], v[cols])


def _np_log_odds_sum(us, v, rows, cols, clip_low):
    if rows.size == 0:
        return 0.0
    p = np.clip(_np_entry_values(us, v, rows, cols), clip_low, 1.0 - clip_low)
    return float(np.sum(np.log(p) - np.log1p(-p)))


def _np_nearest_rows(table, queries):
    out = np.empty(queries.shape[0], dtype=np.int64)
    table_sq = float((table ** 2).sum(axis=1).max()) if table.size else 0.0
    for start in range(0, queries.shape[0], _NN_CHUNK):
        q = queries[start:start + _NN_CHUNK]
        d = ((table[None, :, :] - q[:, None, :]) ** 2).sum(axis=2)
        tol = TIE_RTOL * ((q ** 2).sum(axis=1) + table_sq)
        near = d <= d.min(axis=1)[:, None] + tol[:, None]
        # argmax returns the first True, i.e. the lowest index among ties
        out[start:start + q.shape[0]] = np.argmax(near, axis=1)
    return out


if USE_NUMBA:

    @njit(cache=True)
    def _nb_entry_values(us, v, rows, cols):
        k = us.shape[1]
        out = np.empty(rows.shape[0])
        for e in range(rows.shape[0]):
            i = rows[e]
            j = cols[e]
            acc = 0.0
            for q in range(k):
                acc += us[i, q] * v[j, q]
            out[e] = acc
        return out

    @njit(cache=True)
    def _nb_log_odds_sum(us, v, rows, cols, clip_low):
        k = us.shape[1]
        hi = 1.0 - clip_low
        total = 0.0
        for e in range(rows.shape[0]):
            i = rows[e]
            j = cols[e]
            acc = 0.0
            for q in range(k):
                acc += us[i, q] * v[j, q]
            if acc < clip_low:
                acc = clip_low
            elif acc > hi:
                acc = hi
            total += np.log(acc) - np.log1p(-acc)
        return total

    @njit(cache=True)
    def _nb_nearest_rows(table, queries, tie_rtol):
        n, k = table.shape
        out = np.empty(queries.shape[0], dtype=np.int64)
        dist = np.empty(n)
        table_sq = 0.0
        for i in range(n):
            s = 0.0
            for q in range(k):
                s += table[i, q] * table[i, q]
            table_sq = max(table_sq, s)
        for a in range(queries.shape[0]):
            best = np.inf
            qsq = 0.0
            for q in range(k):
                qsq += queries[a, q] * queries[a, q]
            for i in range(n):
                d = 0.0
                for q in range(k):
                    diff = table[i, q] - queries[a, q]
                    d += diff * diff
                dist[i] = d
                if d < best:
                    best = d
            limit = best + tie_rtol * (qsq + table_sq)
            for i in range(n):
                if dist[i] <= limit:
                    out[a] = i
                    break
        return out


def _want(use_numba):
    if use_numba is None:
        return USE_NUMBA
    return bool(use_numba) and USE_NUMBA


def _prep(us, v, rows, cols):
    return (np.ascontiguousarray(us, dtype=np.float64),
            np.ascontiguousarray(v, dtype=np.float64),
            np.ascontiguousarray(rows, dtype=np.int64),
            np.ascontiguousarray(cols, dtype=np.int64))


def entry_values(us, v, rows, cols, use_numba=None):
    """Raw factor products ``us[r] . v[c]`` for each (r, c) pair."""
    us, v, rows, cols = _prep(us, v, rows, cols)
    if us.shape[1] == 0:
        return np.zeros(rows.shape[0])
    if _want(use_numba):
        return _nb_entry_values(us, v, rows, cols)
    return _np_entry_values(us, v, rows, cols)


def log_odds_sum(us, v, rows, cols, clip_low, use_numba=None):
    """Sum of ``log p - log(1 - p)`` over the listed entries, ``p`` clamped."""
    us, v, rows, cols = _prep(us, v, rows, cols)
    if us.shape[1] == 0:
        p = clip_low
        return rows.shape[0] * (np.log(p) - np.log1p(-p))
    if _want(use_numba):
        return float(_nb_log_odds_sum(us, v, rows, cols, float(clip_low)))
    return _np_log_odds_sum(us, v, rows, cols, clip_low)


def nearest_rows(table, queries, use_numba=None):
    """Index of the nearest ``table`` row (Euclidean) for every query row.

    Ties, up to rounding, go to the lowest index.
    """
    table = np.ascontiguousarray(table, dtype=np.float64)
    queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    if queries.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    if _want(use_numba):
        return _nb_nearest_rows(table, queries, TIE_RTOL)
    return _np_nearest_rows(table, queries)


def zero_term_sums(us, v, clip_low, block_rows=512):
    """Row and column sums of ``log(1 - p)`` over the full clamped model.

    Evaluated block-wise so the dense n*m matrix is never held at once.
    BLAS matmul beats a hand loop here, so both paths share this code.
    """
    n = us.shape[0]
    m = v.shape[0]
    row_sums = np.empty(n)
    col_sums = np.zeros(m)
    if us.shape[1] == 0:
        z = np.log1p(-clip_low)
        row_sums[:] = m * z
        col_sums[:] = n * z
        return row_sums, col_sums
    for start in range(0, n, block_rows):
        p = us[start:start + block_rows] @ v.T
        np.clip(p, clip_low, 1.0 - clip_low, out=p)
        z = np.log1p(-p)
        row_sums[start:start + block_rows] = z.sum(axis=1)
        col_sums += z.sum(axis=0)
    return row_sums, col_sums
