"""Directional derivatives, TCAV scores, and significance testing.

The directional derivative of an example is the dot product of its
middle-layer gradient with a CAV direction; the TCAV score of a class is the
fraction of its examples with strictly positive derivative. A concept is
degenerate for a class when every one of its CAVs yields no positive
derivative at all. Significance is a two-sided Welch t-test of the per-CAV
concept scores against scores of CAVs fit between two random samples.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats


class TcavError(ValueError):
    pass


@dataclass
class DirectionalDerivativeSet:
    concept_id: int | str
    class_k: str
    values: np.ndarray


@dataclass
class TcavResult:
    concept_id: int | str
    class_k: str
    score: float | None
    p_value: float | None
    status: str  # scored | degenerate | insignificant
    n_trials: int
    random_mean: float | None
    random_std: float | None


def directional_derivatives(gradients: np.ndarray, cav, concept_id=None, class_k="") -> DirectionalDerivativeSet:
    gradients = np.asarray(gradients, dtype=np.float64)
    if gradients.ndim != 2 or gradients.shape[0] == 0:
        raise TcavError("gradients must be a non-empty (n, d) array")
    direction = cav.direction if hasattr(cav, "direction") else np.asarray(cav)
    if gradients.shape[1] != direction.shape[0]:
        raise TcavError(
            f"gradient dim {gradients.shape[1]} != cav dim {direction.shape[0]}"
        )
    cid = concept_id if concept_id is not None else getattr(cav, "concept_id", -1)
    return DirectionalDerivativeSet(cid, class_k, gradients @ direction)


def tcav_score(derivatives: DirectionalDerivativeSet) -> float:
    values = derivatives.values
    if len(values) == 0:
        raise TcavError("empty derivative set")
    return float(np.count_nonzero(values > 0) / len(values))


def significance_test(concept_scores, random_scores, alpha: float = 0.05) -> tuple[float, bool]:
    """Two-sided Welch t-test of equal means; significant iff p < alpha."""
    a = np.asarray(concept_scores, dtype=np.float64)
    b = np.asarray(random_scores, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise TcavError("significance test needs at least 2 scores per side")
    if a.std() == 0 and b.std() == 0:
        p = 1.0 if a.mean() == b.mean() else 0.0
        return p, p < alpha
    p = float(stats.ttest_ind(a, b, equal_var=False).pvalue)
    return p, p < alpha


def score_concept(
    concept,
    cavs,
    gradients_by_class: dict[str, np.ndarray],
    random_cavs,
    alpha: float = 0.05,
) -> list[TcavResult]:
    """Score one concept against every class with available gradients."""
    if len(cavs) < 2:
        raise TcavError("need at least 2 concept CAVs")
    cid = concept.cluster_id if hasattr(concept, "cluster_id") else concept
    results = []
    for class_k in sorted(gradients_by_class):
        grads = gradients_by_class[class_k]
        per_cav = [
            directional_derivatives(grads, cav, concept_id=cid, class_k=class_k)
            for cav in cavs
        ]
        if all((dd.values <= 0).all() for dd in per_cav):
            results.append(
                TcavResult(cid, class_k, None, None, "degenerate", len(random_cavs), None, None)
            )
            continue
        concept_scores = [tcav_score(dd) for dd in per_cav]
        random_scores = [
            tcav_score(directional_derivatives(grads, rc, concept_id="random", class_k=class_k))
            for rc in random_cavs
        ]
        p, significant = significance_test(concept_scores, random_scores, alpha)
        results.append(
            TcavResult(
                concept_id=cid,
                class_k=class_k,
                score=float(np.mean(concept_scores)),
                p_value=p,
                status="scored" if significant else "insignificant",
                n_trials=len(random_cavs),
                random_mean=float(np.mean(random_scores)),
                random_std=float(np.std(random_scores)),
            )
        )
    return results


def score_spread(results: list[TcavResult]) -> dict:
    """Per-concept max-minus-min score spread plus global mean/std (population
    std over concepts with at least one scored class)."""
    by_concept: dict = {}
    for r in results:
        if r.score is None:
            continue
        by_concept.setdefault(r.concept_id, []).append(r.score)
    spreads = {cid: max(s) - min(s) for cid, s in sorted(by_concept.items(), key=lambda kv: str(kv[0]))}
    vals = list(spreads.values())
    return {
        "per_concept": spreads,
        "mean": float(np.mean(vals)) if vals else None,
        "std": float(np.std(vals)) if vals else None,
    }
