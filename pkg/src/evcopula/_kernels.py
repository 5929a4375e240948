"""Hot numeric kernels with numba-accelerated and pure-numpy implementations.

The heavy inner loops of the evaluation suite (Kendall's tau at 20k rows,
KDE log-density over 20k x 20k point pairs, exact nearest-neighbour
distances) live here.  Each kernel has two interchangeable backends:

* a ``numba.njit`` version (default when numba imports cleanly), and
* a pure numpy/scipy fallback.

Set the environment variable ``EVCOPULA_NUMBA=0`` before import to force
the fallback path, e.g. on platforms where numba is unavailable.  Every
public function also takes ``use_numba`` to pin a backend explicitly,
which is what ``benchmarks/bench_kernels.py`` and the cross-backend tests
use.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

__all__ = [
    "NUMBA_ENABLED",
    "using_numba",
    "kendall_tau",
    "kde_logpdf",
    "nearest_distances",
]


def _env_allows_numba() -> bool:
    flag = os.environ.get("EVCOPULA_NUMBA", "").strip().lower()
    return flag not in ("0", "false", "off", "no")


if _env_allows_numba():
    try:
        from numba import njit, prange

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - exercised via EVCOPULA_NUMBA=0
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    # No-op decorator so the jitted definitions below stay importable.
    def njit(*args, **kwargs):  # noqa: D103
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range


def using_numba() -> bool:
    """True when the numba backend is the process-wide default."""
    return NUMBA_ENABLED


def _pick(use_numba: bool | None) -> bool:
    if use_numba is None:
        return NUMBA_ENABLED
    if use_numba and not NUMBA_ENABLED:
        raise RuntimeError("numba backend requested but numba is disabled or missing")
    return use_numba


# ---------------------------------------------------------------------------
# Kendall's tau-b, Knight's O(n log n) algorithm
# ---------------------------------------------------------------------------


@njit(cache=True)
def _merge_count(a):
    """Sort ``a`` ascending, returning the number of strict inversions."""
    n = a.size
    buf = np.empty(n, dtype=a.dtype)
    swaps = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    j += 1
                    swaps += mid - i
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = a[j]
                j += 1
                k += 1
        a[:] = buf
        width *= 2
    return swaps


@njit(cache=True)
def _tie_pairs(sorted_vals):
    """Sum of t*(t-1)/2 over runs of equal values in a sorted array."""
    total = 0
    run = 1
    for i in range(1, sorted_vals.size):
        if sorted_vals[i] == sorted_vals[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    total += run * (run - 1) // 2
    return total


@njit(cache=True)
def _joint_tie_pairs(xs, ys):
    total = 0
    run = 1
    for i in range(1, xs.size):
        if xs[i] == xs[i - 1] and ys[i] == ys[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    total += run * (run - 1) // 2
    return total


@njit(cache=True)
def _tau_b_from_lexsorted(xs, ys):
    n = xs.size
    tot = n * (n - 1) // 2
    xtie = _tie_pairs(xs)
    xytie = _joint_tie_pairs(xs, ys)
    work = ys.copy()
    dis = _merge_count(work)
    ytie = _tie_pairs(work)
    num = tot - xtie - ytie + xytie - 2 * dis
    denom = math.sqrt(float(tot - xtie)) * math.sqrt(float(tot - ytie))
    return num / denom


def kendall_tau(x, y, use_numba: bool | None = None) -> float:
    """Tie-corrected Kendall's tau-b between two samples.

    Numba path: Knight's merge-sort counting.  Fallback: scipy's C
    implementation.  Both are exact tau-b and agree to float rounding.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError("kendall_tau expects two 1-D arrays of equal length")
    if x.size < 2:
        raise ValueError("kendall_tau needs at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("kendall_tau undefined for an all-tied sample")
    if _pick(use_numba):
        order = np.lexsort((y, x))
        tau = float(_tau_b_from_lexsorted(x[order], y[order]))
    else:
        tau = float(stats.kendalltau(x, y).statistic)
    # sqrt rounding can land a hair outside [-1, 1] at perfect (dis)concordance
    return min(1.0, max(-1.0, tau))


# ---------------------------------------------------------------------------
# Gaussian-kernel KDE log-density (isotropic bandwidth)
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _kde_logpdf_nb(points, queries, h):
    m, d = points.shape
    n = queries.shape[0]
    out = np.empty(n, dtype=np.float64)
    inv2h2 = 1.0 / (2.0 * h * h)
    log_norm = math.log(m) + d * (math.log(h) + 0.5 * math.log(2.0 * math.pi))
    for q in prange(n):
        # pass 1: max exponent for a stable log-sum-exp
        best = -np.inf
        for k in range(m):
            s = 0.0
            for j in range(d):
                diff = queries[q, j] - points[k, j]
                s += diff * diff
            e = -s * inv2h2
            if e > best:
                best = e
        acc = 0.0
        for k in range(m):
            s = 0.0
            for j in range(d):
                diff = queries[q, j] - points[k, j]
                s += diff * diff
            acc += math.exp(-s * inv2h2 - best)
        out[q] = best + math.log(acc) - log_norm
    return out


def _kde_logpdf_np(points, queries, h, chunk=128):
    m, d = points.shape
    n = queries.shape[0]
    out = np.empty(n, dtype=np.float64)
    log_norm = math.log(m) + d * (math.log(h) + 0.5 * math.log(2.0 * math.pi))
    inv2h2 = 1.0 / (2.0 * h * h)
    for lo in range(0, n, chunk):
        q = queries[lo : lo + chunk]
        sq = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        expo = -sq * inv2h2
        best = expo.max(axis=1)
        out[lo : lo + chunk] = (
            best + np.log(np.exp(expo - best[:, None]).sum(axis=1)) - log_norm
        )
    return out


def kde_logpdf(points, queries, bandwidth: float, use_numba: bool | None = None):
    """Log-density of an equal-weight Gaussian mixture centred at ``points``.

    Kernel is N(0, bandwidth^2 * I) in every dimension; evaluation is an
    exact log-sum-exp, so far-away queries give large negative values
    rather than -inf.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if points.ndim != 2 or queries.ndim != 2 or points.shape[1] != queries.shape[1]:
        raise ValueError("points and queries must be 2-D with matching width")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if _pick(use_numba):
        return _kde_logpdf_nb(points, queries, float(bandwidth))
    return _kde_logpdf_np(points, queries, float(bandwidth))


# ---------------------------------------------------------------------------
# Exact nearest-neighbour distances
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _nearest_nb(queries, refs):
    n, d = queries.shape
    m = refs.shape[0]
    out = np.empty(n, dtype=np.float64)
    for q in prange(n):
        best = np.inf
        for k in range(m):
            s = 0.0
            for j in range(d):
                diff = queries[q, j] - refs[k, j]
                s += diff * diff
            if s < best:
                best = s
        out[q] = math.sqrt(best)
    return out


def nearest_distances(queries, refs, use_numba: bool | None = None):
    """Euclidean distance from each query row to its nearest reference row."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    if queries.ndim != 2 or refs.ndim != 2 or queries.shape[1] != refs.shape[1]:
        raise ValueError("queries and refs must be 2-D with matching width")
    if refs.shape[0] == 0:
        raise ValueError("reference set is empty")
    if _pick(use_numba):
        return _nearest_nb(queries, refs)
    dists, _ = cKDTree(refs).query(queries, k=1)
    return np.asarray(dists, dtype=np.float64)
