"""Directional derivatives, TCAV scores, significance, spread."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dtcav.concept_cav import Cav
from dtcav.tcav_engine import (
    DirectionalDerivativeSet,
    TcavError,
    TcavResult,
    directional_derivatives,
    score_concept,
    score_spread,
    significance_test,
    tcav_score,
)


def _cav(direction, concept_id=0):
    direction = np.asarray(direction, dtype=np.float64)
    return Cav(direction / np.linalg.norm(direction), 0.0, concept_id, 0, 1.0, False)


def _dds(values):
    return DirectionalDerivativeSet(0, "NOR", np.asarray(values, dtype=np.float64))


def welch_oracle(a, b):
    """Independent scalar Welch t-test implementation."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    t = (a.mean() - b.mean()) / np.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return 2 * stats.t.sf(abs(t), df)


class TestDirectionalDerivatives:
    def test_aligned_unit_vectors(self):
        out = directional_derivatives(np.array([[1.0, 0.0]]), _cav([1.0, 0.0]))
        assert out.values.tolist() == [1.0]

    def test_zero_gradient(self):
        out = directional_derivatives(np.zeros((3, 4)), _cav([1, 0, 0, 0]))
        assert (out.values == 0).all()

    def test_dot_product_value(self):
        out = directional_derivatives(np.array([[1.0, 2.0, 3.0]]), _cav([0.6, 0.0, 0.8]))
        assert out.values[0] == pytest.approx(3.0)

    def test_dimension_mismatch(self):
        with pytest.raises(TcavError, match="dim"):
            directional_derivatives(np.zeros((2, 3)), _cav([1.0, 0.0]))

    def test_empty(self):
        with pytest.raises(TcavError):
            directional_derivatives(np.zeros((0, 3)), _cav([1, 0, 0]))


class TestTcavScore:
    def test_all_positive(self):
        assert tcav_score(_dds([0.1, 0.2, 3.0])) == 1.0

    def test_half_positive(self):
        assert tcav_score(_dds([1, -1, 2, -2])) == 0.5

    def test_zeros_count_as_nonpositive(self):
        assert tcav_score(_dds([0.0, 0.0])) == 0.0

    def test_empty(self):
        with pytest.raises(TcavError):
            tcav_score(_dds([]))

    @given(
        values=st.lists(
            st.floats(-10, 10, allow_nan=False).filter(lambda v: abs(v) > 1e-6),
            min_size=1,
            max_size=30,
        ),
        scale=st.floats(1e-3, 1e3),
    )
    @settings(max_examples=50, deadline=None)
    def test_positive_scaling_invariance_and_negation(self, values, scale):
        s = tcav_score(_dds(values))
        assert 0.0 <= s <= 1.0
        assert tcav_score(_dds([v * scale for v in values])) == s
        # with no exact zeros, negating the direction flips the score
        assert tcav_score(_dds([-v for v in values])) == pytest.approx(1.0 - s)


class TestSignificance:
    def test_identical_constants_not_significant(self):
        p, sig = significance_test([0.5] * 10, [0.5] * 100)
        assert p == 1.0
        assert not sig

    def test_constant_vs_different_constant(self):
        p, sig = significance_test([1.0, 1.0], [0.0, 0.0])
        assert p == 0.0
        assert sig

    def test_separated_samples_significant_and_match_oracle(self):
        rng = np.random.default_rng(0)
        concept = [1.0] * 100
        random = np.clip(rng.normal(0.5, 0.1, 100), 0, 1).tolist()
        p, sig = significance_test(concept, random)
        assert sig
        assert p == pytest.approx(welch_oracle(concept, random), rel=1e-9)

    def test_matches_oracle_on_noisy_data(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = rng.random(rng.integers(5, 30))
            b = rng.random(rng.integers(5, 30))
            p, _ = significance_test(a, b)
            assert p == pytest.approx(welch_oracle(a, b), rel=1e-9)

    def test_too_few_entries(self):
        with pytest.raises(TcavError):
            significance_test([0.5], [0.5, 0.5])
        with pytest.raises(TcavError):
            significance_test([0.5, 0.5], [0.5])


class TestScoreConcept:
    def _random_cavs(self, d, n=100, seed=0):
        rng = np.random.default_rng(seed)
        return [_cav(rng.standard_normal(d), concept_id="random") for _ in range(n)]

    def test_aligned_concept_scores_one(self):
        d = 6
        rng = np.random.default_rng(2)
        w = np.zeros(d)
        w[0] = 1.0
        grads = w[None, :] + 0.01 * rng.standard_normal((50, d))
        cavs = [_cav(w + 0.01 * rng.standard_normal(d)) for _ in range(10)]
        results = score_concept(0, cavs, {"NOR": grads}, self._random_cavs(d))
        (r,) = results
        assert r.score == 1.0
        assert r.status == "scored"
        assert r.p_value < 0.05

    def test_orthogonal_concept_near_half(self):
        d = 6
        rng = np.random.default_rng(3)
        w = np.zeros(d)
        w[0] = 1.0
        ortho = np.zeros(d)
        ortho[1] = 1.0
        # gradients: strong w component plus symmetric noise in the rest
        grads = 5.0 * w[None, :] + rng.standard_normal((200, d)) * (1 - w)[None, :]
        cavs = [_cav(ortho + 0.05 * rng.standard_normal(d) * (1 - w)) for _ in range(10)]
        results = score_concept(0, cavs, {"NOR": grads}, self._random_cavs(d, seed=4))
        (r,) = results
        assert 0.35 <= r.score <= 0.65
        assert r.status in ("insignificant", "scored")

    def test_degenerate_rule(self):
        d = 4
        w = np.zeros(d)
        w[0] = 1.0
        grads = -np.abs(np.random.default_rng(5).standard_normal((20, d)))
        cavs = [_cav(np.abs(np.random.default_rng(i).random(d)) + 0.1) for i in range(5)]
        # every gradient is in the negative orthant, every cav in the positive
        results = score_concept(0, cavs, {"NOR": grads}, self._random_cavs(d, seed=6))
        (r,) = results
        assert r.status == "degenerate"
        assert r.score is None
        assert r.p_value is None

    def test_requires_two_cavs(self):
        with pytest.raises(TcavError):
            score_concept(0, [_cav([1.0, 0.0])], {"NOR": np.zeros((2, 2))}, [])

    def test_scores_every_class(self):
        d = 3
        rng = np.random.default_rng(7)
        cavs = [_cav(rng.standard_normal(d)) for _ in range(3)]
        grads = {k: rng.standard_normal((10, d)) for k in ("NOR", "DCM", "HCM")}
        results = score_concept(1, cavs, grads, self._random_cavs(d, seed=8))
        assert [r.class_k for r in results] == ["DCM", "HCM", "NOR"]
        assert all(r.concept_id == 1 for r in results)


class TestScoreSpread:
    def _result(self, cid, cls, score):
        return TcavResult(cid, cls, score, 0.01, "scored", 100, 0.5, 0.1)

    def test_documented_spread(self):
        results = [
            self._result(56, "MINF", 0.49),
            self._result(56, "RV", 0.26),
            self._result(56, "HCM", 0.23),
        ]
        spread = score_spread(results)
        assert spread["per_concept"][56] == pytest.approx(0.26)
        assert spread["mean"] == pytest.approx(0.26)
        assert spread["std"] == 0.0

    def test_equal_scores_zero_spread(self):
        results = [self._result(0, c, 0.7) for c in ("NOR", "DCM")]
        assert score_spread(results)["per_concept"][0] == 0.0

    def test_single_class_zero_spread(self):
        assert score_spread([self._result(3, "NOR", 0.9)])["per_concept"][3] == 0.0

    def test_unscored_concepts_excluded(self):
        results = [
            self._result(0, "NOR", 0.8),
            TcavResult(1, "NOR", None, None, "degenerate", 100, None, None),
        ]
        spread = score_spread(results)
        assert set(spread["per_concept"]) == {0}

    def test_empty(self):
        spread = score_spread([])
        assert spread["per_concept"] == {}
        assert spread["mean"] is None
