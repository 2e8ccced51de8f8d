"""Hot numeric kernels: numba-jitted loops with pure-numpy fallbacks.

Set ``DTCAV_DISABLE_NUMBA=1`` in the environment to force the numpy path
(useful for debugging and as a baseline for ``benchmarks/bench_kernels.py``).
Both paths implement the same arithmetic so results agree to float rounding.
"""

import os

import numpy as np

_DISABLE = os.environ.get("DTCAV_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

HAVE_NUMBA = False
if not _DISABLE:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass


# ---------------------------------------------------------------------------
# k-means point assignment


def assign_points_numpy(points, centroids):
    """Assign each point to its nearest centroid (squared euclidean).

    Returns (labels, sqdists). Ties resolve to the lowest centroid index.
    """
    n = points.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    best = np.full(n, np.inf)
    for ci in range(centroids.shape[0]):
        diff = points - centroids[ci]
        d2 = np.einsum("ij,ij->i", diff, diff)
        better = d2 < best
        best[better] = d2[better]
        labels[better] = ci
    return labels, best


def _assign_points_loop(points, centroids):
    n, d = points.shape
    k = centroids.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    best = np.full(n, np.inf)
    for i in range(n):
        for ci in range(k):
            acc = 0.0
            for j in range(d):
                diff = points[i, j] - centroids[ci, j]
                acc += diff * diff
            if acc < best[i]:
                best[i] = acc
                labels[i] = ci
    return labels, best


# ---------------------------------------------------------------------------
# SLIC windowed assignment
#
# Distance: D = (dI)^2 + ratio * ((dr)^2 + (dc)^2) with ratio = (m/S)^2,
# searched in a (4S+1)-sized window around each cluster center.


def slic_assign_numpy(image, centers, span, ratio):
    H, W = image.shape
    labels = np.full((H, W), -1, dtype=np.int64)
    best = np.full((H, W), np.inf)
    rows = np.arange(H, dtype=np.float64)
    cols = np.arange(W, dtype=np.float64)
    for ci in range(centers.shape[0]):
        cI, cr, cc = centers[ci]
        r0 = max(0, int(cr) - span)
        r1 = min(H, int(cr) + span + 1)
        c0 = max(0, int(cc) - span)
        c1 = min(W, int(cc) + span + 1)
        di = image[r0:r1, c0:c1] - cI
        dr = rows[r0:r1, None] - cr
        dc = cols[None, c0:c1] - cc
        d = di * di + ratio * (dr * dr + dc * dc)
        win_best = best[r0:r1, c0:c1]
        better = d < win_best
        win_best[better] = d[better]
        lab = labels[r0:r1, c0:c1]
        lab[better] = ci
    return labels, best


def _slic_assign_loop(image, centers, span, ratio):
    H, W = image.shape
    labels = np.full((H, W), -1, dtype=np.int64)
    best = np.full((H, W), np.inf)
    for ci in range(centers.shape[0]):
        cI = centers[ci, 0]
        cr = centers[ci, 1]
        cc = centers[ci, 2]
        r0 = max(0, int(cr) - span)
        r1 = min(H, int(cr) + span + 1)
        c0 = max(0, int(cc) - span)
        c1 = min(W, int(cc) + span + 1)
        for r in range(r0, r1):
            dr = r - cr
            for c in range(c0, c1):
                di = image[r, c] - cI
                dc = c - cc
                d = di * di + ratio * (dr * dr + dc * dc)
                if d < best[r, c]:
                    best[r, c] = d
                    labels[r, c] = ci
    return labels, best


# ---------------------------------------------------------------------------
# Full-batch logistic-regression gradient descent
#
# Labels y in {-1, +1}; minimizes mean log(1 + exp(-y z)) + lam/2 ||w||^2.
# Single source compiled by numba when available; runs vectorized otherwise.


def _logistic_gd_impl(X, XT, y, lam, lr, max_steps, tol):
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(max_steps):
        z = np.dot(X, w) + b
        yz = np.minimum(y * z, 50.0)
        s = 1.0 / (1.0 + np.exp(yz))
        ys = y * s
        gw = -np.dot(XT, ys) / n + lam * w
        gb = -np.sum(ys) / n
        gn = np.sqrt(np.sum(gw * gw) + gb * gb)
        if gn < tol:
            break
        w = w - lr * gw
        b = b - lr * gb
    return w, b


logistic_gd_numpy = _logistic_gd_impl

if HAVE_NUMBA:
    assign_points_numba = njit(cache=True)(_assign_points_loop)
    slic_assign_numba = njit(cache=True)(_slic_assign_loop)
    logistic_gd_numba = njit(cache=True)(_logistic_gd_impl)
    assign_points = assign_points_numba
    slic_assign = slic_assign_numba
    logistic_gd = logistic_gd_numba
else:
    assign_points = assign_points_numpy
    slic_assign = slic_assign_numpy
    logistic_gd = logistic_gd_numpy
