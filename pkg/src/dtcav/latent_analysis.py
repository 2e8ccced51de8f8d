"""Latent-space analysis: reduction, k-means with elbow selection, outlier
removal, and cluster composition summaries.

k-means determinism: points are first brought into a canonical order
(lexicographic sort, then a seed-derived index shuffle), so the result depends
only on the point multiset and the seed, not on input order. Lloyd iterations
run until the assignment reaches a fixpoint or 300 iterations; empty clusters
are reseeded to the farthest point. Distortion is the average squared
euclidean distance to the assigned centroid and is asserted non-increasing
across iterations.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

MAX_LLOYD_ITERS = 300


class AnalysisError(ValueError):
    pass


@dataclass
class ElbowCurve:
    ks: list[int]
    distortions: list[float]


@dataclass
class ElbowChoice:
    k: int
    no_elbow: bool


@dataclass
class KmeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    distortion: float
    n_iters: int


@dataclass
class ClusterSummary:
    cluster_id: int
    member_patches: list[int]  # indices into the patch list
    size: int
    per_pathology_counts: dict[str, int]
    per_patient_counts: dict[str, int]
    centroid: np.ndarray
    mean_distance: float


def reduce(points: np.ndarray, method: str = "pca", target_dim: int | None = None) -> np.ndarray:
    """Reduce latent vectors; ``none`` is the identity, ``pca`` projects onto
    the top principal directions with a deterministic sign convention."""
    points = np.asarray(points, dtype=np.float64)
    if method == "none":
        return points
    if method != "pca":
        raise AnalysisError(f"unknown reduction method {method!r}")
    n, d = points.shape
    if target_dim is None:
        target_dim = pca_dim_for_variance(points)
    if target_dim > d:
        raise AnalysisError(f"target_dim {target_dim} > dimension {d}")
    if n < 2 or n <= target_dim:
        raise AnalysisError("pca needs more points than components")
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:target_dim]
    # sign convention: largest-magnitude coordinate of each component positive
    for i in range(comps.shape[0]):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def pca_dim_for_variance(points: np.ndarray, threshold: float = 0.95, cap: int = 32) -> int:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    var = s**2
    total = var.sum()
    if total == 0:
        return 1
    cum = np.cumsum(var) / total
    dim = int(np.searchsorted(cum, threshold) + 1)
    return min(dim, cap, points.shape[1])


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.einsum("ij,ij->i", points - centroids[0], points - centroids[0])
    for ci in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[ci] = points[idx]
        nd2 = np.einsum("ij,ij->i", points - centroids[ci], points - centroids[ci])
        np.minimum(d2, nd2, out=d2)
    return centroids


def kmeans(points: np.ndarray, k: int, seed: int = 0) -> KmeansResult:
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise AnalysisError(f"k must be >= 1, got {k}")
    if k > n:
        raise AnalysisError(f"k={k} exceeds number of points {n}")

    canonical = np.lexsort(points.T[::-1])
    rng = np.random.default_rng(seed)
    shuffled = canonical[rng.permutation(n)]
    pts = np.ascontiguousarray(points[shuffled])

    centroids = _kmeans_pp(pts, k, rng)
    prev_labels = None
    prev_distortion = np.inf
    n_iters = 0
    for it in range(MAX_LLOYD_ITERS):
        n_iters = it + 1
        labels, sqd = _kernels.assign_points(pts, centroids)
        # reseed empty clusters to the current farthest point
        counts = np.bincount(labels, minlength=k)
        while (counts == 0).any():
            empty = int(np.argmin(counts))
            far = int(np.argmax(sqd))
            centroids[empty] = pts[far]
            labels, sqd = _kernels.assign_points(pts, centroids)
            counts = np.bincount(labels, minlength=k)
        distortion = float(sqd.mean())
        assert distortion <= prev_distortion * (1 + 1e-9) + 1e-12, (
            f"distortion increased: {prev_distortion} -> {distortion}"
        )
        prev_distortion = distortion
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels
        for ci in range(k):
            centroids[ci] = pts[labels == ci].mean(axis=0)

    assignments = np.empty(n, dtype=np.int64)
    assignments[shuffled] = labels
    return KmeansResult(assignments, centroids, prev_distortion, n_iters)


def distortion_scan(points: np.ndarray, ks, seed: int = 0) -> ElbowCurve:
    """Distortion curve over candidate ks; per-k seeds derive from the master."""
    ks = sorted(ks)
    distortions = [kmeans(points, k, seed=seed * 100003 + k).distortion for k in ks]
    return ElbowCurve(list(ks), distortions)


def default_k_range(n_points: int) -> list[int]:
    upper = min(100, n_points // 10)
    return list(range(2, max(upper, 4) + 1))


def elbow_select(curve: ElbowCurve) -> ElbowChoice:
    """k maximizing the discrete second difference of the distortion curve.

    Ties break toward smaller k. If no interior point is convex (max second
    difference <= 0) the largest k is returned with ``no_elbow`` set.
    """
    if len(curve.ks) < 3:
        raise AnalysisError("elbow selection needs at least 3 curve points")
    d = curve.distortions
    best_k, best_val = None, 0.0
    for i in range(1, len(d) - 1):
        val = d[i - 1] - 2 * d[i] + d[i + 1]
        if val > best_val:
            best_val = val
            best_k = curve.ks[i]
    if best_k is None:
        return ElbowChoice(curve.ks[-1], no_elbow=True)
    return ElbowChoice(best_k, no_elbow=False)


def remove_outliers(assignments: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Drop points strictly farther from their cluster centroid than the
    cluster's 95th-percentile distance. Dropped points get assignment -1;
    centroids are not recomputed."""
    assignments = np.asarray(assignments).copy()
    points = np.asarray(points, dtype=np.float64)
    for ci in np.unique(assignments):
        if ci < 0:
            continue
        members = np.where(assignments == ci)[0]
        centroid = points[members].mean(axis=0)
        dists = np.linalg.norm(points[members] - centroid, axis=1)
        cut = np.percentile(dists, 95)
        assignments[members[dists > cut]] = -1
    return assignments


def summarize(assignments: np.ndarray, points: np.ndarray, patches) -> list[ClusterSummary]:
    """Per-cluster composition; ``patches`` holds per-point metadata with
    ``pathology`` and ``patient_id`` attributes (dropped points excluded)."""
    summaries = []
    for ci in sorted(int(c) for c in np.unique(assignments) if c >= 0):
        members = [int(i) for i in np.where(assignments == ci)[0]]
        pathology: dict[str, int] = {}
        patient: dict[str, int] = {}
        for i in members:
            p = patches[i]
            pathology[p.pathology] = pathology.get(p.pathology, 0) + 1
            patient[p.patient_id] = patient.get(p.patient_id, 0) + 1
        centroid = points[members].mean(axis=0)
        mean_dist = float(np.linalg.norm(points[members] - centroid, axis=1).mean())
        summaries.append(
            ClusterSummary(
                cluster_id=ci,
                member_patches=members,
                size=len(members),
                per_pathology_counts=pathology,
                per_patient_counts=patient,
                centroid=centroid,
                mean_distance=mean_dist,
            )
        )
    return summaries
