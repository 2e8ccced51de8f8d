"""Concept selection and Concept Activation Vector fitting.

A CAV is the unit normal of a regularized logistic-regression boundary
between a concept's latent vectors and a random counterpart sample, signed
toward the concept side. Training uses full-batch gradient descent (L2
penalty 1e-3, stop at gradient norm < 1e-6 or 10k steps) on a deterministic
80/20 split; the held-out 20% gives the training-quality accuracy.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels


class CavError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    min_size: int = 30
    max_size: int = 600
    min_patients: int = 3
    max_single_patient_share: float = 0.5

    def __post_init__(self):
        if self.min_size > self.max_size:
            raise CavError("min_size > max_size")
        if not 0 < self.max_single_patient_share <= 1:
            raise CavError("max_single_patient_share must be in (0, 1]")


@dataclass
class Concept:
    cluster_id: int
    member_indices: list[int]
    selected: bool
    rejection_reason: str | None  # too_small | too_large | single_patient | too_few_patients


@dataclass
class Cav:
    direction: np.ndarray  # unit vector, points toward the concept side
    offset: float  # scaled intercept; decision = sign(direction . x + offset)
    concept_id: int | str
    counterpart_seed: int
    training_accuracy: float
    low_quality: bool


def select_concepts(summaries, config: SelectionConfig) -> list[Concept]:
    """Flag every cluster as a selected concept or carry a rejection reason.

    Rejected clusters remain scorable downstream; selection only marks which
    clusters pass the range-based review.
    """
    concepts = []
    for s in summaries:
        reason = None
        if s.size < config.min_size:
            reason = "too_small"
        elif s.size > config.max_size:
            reason = "too_large"
        elif len(s.per_patient_counts) == 1:
            reason = "single_patient"
        elif len(s.per_patient_counts) < config.min_patients:
            reason = "too_few_patients"
        elif max(s.per_patient_counts.values()) / s.size > config.max_single_patient_share:
            reason = "single_patient"
        concepts.append(
            Concept(
                cluster_id=s.cluster_id,
                member_indices=list(s.member_patches),
                selected=reason is None,
                rejection_reason=reason,
            )
        )
    return concepts


def sample_counterpart(
    all_points: np.ndarray, size: int, seed: int, exclude: set[int] | None = None
) -> np.ndarray:
    """Uniform sample without replacement from the pool, excluding the
    concept's own member indices; deterministic per seed."""
    n = all_points.shape[0]
    eligible = np.array(
        [i for i in range(n) if not exclude or i not in exclude], dtype=np.int64
    )
    if size > len(eligible):
        raise CavError(f"counterpart size {size} exceeds pool {len(eligible)}")
    order = np.random.default_rng(seed).permutation(len(eligible))
    return all_points[eligible[order[:size]]]


def _split_80_20(n: int) -> tuple[slice, slice]:
    cut = max(1, int(round(0.8 * n)))
    if cut == n:
        cut = n - 1
    return slice(0, cut), slice(cut, n)


def fit_cav(
    concept_points: np.ndarray,
    counterpart_points: np.ndarray,
    seed: int = 0,
    concept_id: int | str = -1,
    lam: float = 1e-3,
    tol: float = 1e-6,
    max_steps: int = 10_000,
) -> Cav:
    concept_points = np.asarray(concept_points, dtype=np.float64)
    counterpart_points = np.asarray(counterpart_points, dtype=np.float64)
    if concept_points.shape[1] != counterpart_points.shape[1]:
        raise CavError("dimension mismatch between concept and counterpart")
    if len(concept_points) < 2 or len(counterpart_points) < 2:
        raise CavError("need at least 2 points per side")

    # per-set shuffle seeded identically so swapping the sets mirrors exactly
    pos = concept_points[np.random.default_rng(seed).permutation(len(concept_points))]
    neg = counterpart_points[np.random.default_rng(seed).permutation(len(counterpart_points))]
    ptr, pte = _split_80_20(len(pos))
    ntr, nte = _split_80_20(len(neg))

    X = np.vstack([pos[ptr], neg[ntr]])
    y = np.concatenate([np.ones(ptr.stop), -np.ones(ntr.stop)])
    # canonical row order makes the fit exactly antisymmetric under set swap
    order = np.lexsort(X.T[::-1])
    X = np.ascontiguousarray(X[order])
    y = y[order]
    n = X.shape[0]
    smax = np.linalg.norm(X, 2)
    lr = 1.0 / (smax * smax / (4.0 * n) + lam)
    w, b = _kernels.logistic_gd(X, np.ascontiguousarray(X.T), y, lam, lr, max_steps, tol)

    norm = float(np.linalg.norm(w))
    if norm < 1e-12:
        # degenerate data: no separating signal at all
        direction = np.zeros_like(w)
        direction[0] = 1.0
        return Cav(direction, 0.0, concept_id, seed, 0.5, True)

    Xte = np.vstack([pos[pte], neg[nte]])
    yte = np.concatenate([np.ones(pte.stop - pte.start), -np.ones(nte.stop - nte.start)])
    acc = float(np.mean(np.where(Xte @ w + b > 0, 1.0, -1.0) == yte))
    return Cav(w / norm, b / norm, concept_id, seed, acc, acc < 0.65)
