"""Hot numeric kernels.

Each kernel has a numba ``@njit`` implementation and a pure numpy/scipy
fallback with identical semantics. The numba path is used when numba imports
cleanly and ``TUBEFLOW_DISABLE_NUMBA`` is unset (or "0"). ``TUBEFLOW_THREADS``
caps the numba thread pool.
"""

import os

import numpy as np
from scipy.spatial import cKDTree

_disabled = os.environ.get("TUBEFLOW_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

# the bundled TBB is too old for numba; the workqueue layer needs nothing extra
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    if _disabled:
        raise ImportError("numba disabled by TUBEFLOW_DISABLE_NUMBA")
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

if NUMBA_AVAILABLE:
    _threads = os.environ.get("TUBEFLOW_THREADS")
    if _threads:
        numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# adjugate inverse
# ---------------------------------------------------------------------------

def _adjugate_inverse_numpy(A):
    A = np.asarray(A, dtype=float)
    B, n, _ = A.shape
    det = np.linalg.det(A)
    if n == 1:
        return 1.0 / A, det
    cof = np.empty_like(A)
    idx = np.arange(n)
    for i in range(n):
        rows = idx[idx != i]
        for j in range(n):
            cols = idx[idx != j]
            minor = A[:, rows][:, :, cols]
            cof[:, i, j] = (-1.0) ** (i + j) * np.linalg.det(minor)
    # adjugate is the transposed cofactor matrix
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.transpose(cof, (0, 2, 1)) / det[:, None, None]
    return inv, det


if NUMBA_AVAILABLE:

    @njit(cache=True, error_model="numpy")
    def _det_small(M):
        n = M.shape[0]
        if n == 0:
            return 1.0
        a = M.copy()
        det = 1.0
        for c in range(n):
            p = c
            best = abs(a[c, c])
            for r in range(c + 1, n):
                if abs(a[r, c]) > best:
                    best = abs(a[r, c])
                    p = r
            if best == 0.0:
                return 0.0
            if p != c:
                for k in range(n):
                    tmp = a[c, k]
                    a[c, k] = a[p, k]
                    a[p, k] = tmp
                det = -det
            det *= a[c, c]
            for r in range(c + 1, n):
                f = a[r, c] / a[c, c]
                for k in range(c, n):
                    a[r, k] -= f * a[c, k]
        return det

    @njit(cache=True, parallel=True, error_model="numpy")
    def _adjugate_inverse_numba(A):
        B, n, _ = A.shape
        inv = np.empty_like(A)
        dets = np.empty(B)
        for b in prange(B):
            M = A[b]
            d = _det_small(M)
            dets[b] = d
            minor = np.empty((n - 1, n - 1))
            for i in range(n):
                for j in range(n):
                    # minor with row i and column j removed
                    ri = 0
                    for r in range(n):
                        if r == i:
                            continue
                        ci = 0
                        for c in range(n):
                            if c == j:
                                continue
                            minor[ri, ci] = M[r, c]
                            ci += 1
                        ri += 1
                    sign = 1.0 if (i + j) % 2 == 0 else -1.0
                    inv[b, j, i] = sign * _det_small(minor) / d
        return inv, dets


def adjugate_inverse_batch(A):
    """Invert a stack of small square matrices through cofactors.

    Returns ``(inverse, det)``. Singular entries yield inf/nan; callers check
    ``det``.
    """
    A = np.ascontiguousarray(A, dtype=float)
    if NUMBA_AVAILABLE:
        with np.errstate(divide="ignore", invalid="ignore"):
            return _adjugate_inverse_numba(A)
    return _adjugate_inverse_numpy(A)


# ---------------------------------------------------------------------------
# close pairs (injectivity witness search)
# ---------------------------------------------------------------------------

def _param_dist(a, b, periods):
    d = np.abs(a - b)
    per = periods > 0
    d = np.where(per, np.minimum(d, np.where(per, periods, np.inf) - d), d)
    return np.sqrt(np.sum(d * d, axis=-1))


def _close_pair_numpy(points, params, periods, amb_thr, par_thr):
    if amb_thr <= 0.0 or len(points) < 2:
        return -1, -1, np.inf, 0.0
    tree = cKDTree(points)
    pairs = tree.query_pairs(amb_thr, output_type="ndarray")
    if len(pairs) == 0:
        return -1, -1, np.inf, 0.0
    i, j = pairs[:, 0], pairs[:, 1]
    amb = np.linalg.norm(points[i] - points[j], axis=1)
    par = _param_dist(params[i], params[j], periods)
    ok = (amb < amb_thr) & (par > par_thr)
    if not ok.any():
        return -1, -1, np.inf, 0.0
    i, j, amb, par = i[ok], j[ok], amb[ok], par[ok]
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    order = np.lexsort((hi, lo, amb))
    b = order[0]
    return int(lo[b]), int(hi[b]), float(amb[b]), float(par[b])


if NUMBA_AVAILABLE:

    @njit(cache=True, error_model="numpy")
    def _close_pair_numba(points, params, periods, amb_thr, par_thr):
        n, N = points.shape
        k = params.shape[1]
        order = np.argsort(points[:, 0])
        best_i, best_j = -1, -1
        best_amb, best_par = np.inf, 0.0
        if amb_thr <= 0.0:
            return best_i, best_j, best_amb, best_par
        thr2 = amb_thr * amb_thr
        for a in range(n):
            i = order[a]
            xi = points[i, 0]
            for b in range(a + 1, n):
                j = order[b]
                if points[j, 0] - xi >= amb_thr:
                    break
                d2 = 0.0
                for c in range(N):
                    t = points[i, c] - points[j, c]
                    d2 += t * t
                if d2 >= thr2:
                    continue
                p2 = 0.0
                for c in range(k):
                    t = abs(params[i, c] - params[j, c])
                    if periods[c] > 0.0:
                        t = min(t, periods[c] - t)
                    p2 += t * t
                par = np.sqrt(p2)
                if par <= par_thr:
                    continue
                amb = np.sqrt(d2)
                lo, hi = min(i, j), max(i, j)
                if (amb < best_amb or (amb == best_amb and (lo < best_i or (lo == best_i and hi < best_j)))):
                    best_i, best_j, best_amb, best_par = lo, hi, amb, par
        return best_i, best_j, best_amb, best_par


def close_pair(points, params, periods, amb_thr, par_thr):
    """Find the closest ambient pair that is far apart in parameter space.

    Returns ``(i, j, ambient_distance, parameter_distance)`` for the pair with
    smallest ambient distance among pairs with ambient distance ``< amb_thr``
    and periodic parameter distance ``> par_thr``; ``(-1, -1, inf, 0)`` if none.
    """
    points = np.ascontiguousarray(points, dtype=float)
    params = np.ascontiguousarray(params, dtype=float)
    periods = np.ascontiguousarray(periods, dtype=float)
    if NUMBA_AVAILABLE:
        i, j, amb, par = _close_pair_numba(points, params, periods, float(amb_thr), float(par_thr))
        return int(i), int(j), float(amb), float(par)
    return _close_pair_numpy(points, params, periods, float(amb_thr), float(par_thr))


# both paths exposed for the benchmark and parity tests
adjugate_inverse_numpy = _adjugate_inverse_numpy
close_pair_numpy = _close_pair_numpy
if NUMBA_AVAILABLE:
    adjugate_inverse_numba = _adjugate_inverse_numba
    close_pair_numba = _close_pair_numba
