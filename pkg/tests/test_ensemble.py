import math

import numpy as np
import pytest

from zseval import ensemble as en


def slot_softmax_mean_oracle(sims, scale):
    """Independent pure-python reference: per-slot softmax over categories, then slot mean."""
    c_count = len(sims)
    k_count = len(sims[0])
    scores = [0.0] * c_count
    for k in range(k_count):
        column = [scale * sims[c][k] for c in range(c_count)]
        peak = max(column)
        exps = [math.exp(v - peak) for v in column]
        total = sum(exps)
        for c in range(c_count):
            scores[c] += exps[c] / total / k_count
    return scores


def random_unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


class TestPooling:
    def test_single_vector_identity(self):
        v = random_unit(np.random.default_rng(0), 8)
        assert np.allclose(en.pool_vision_embedding([v]), v)

    def test_idempotent_on_copies(self):
        v = random_unit(np.random.default_rng(1), 8)
        for n in (2, 3, 7):
            assert np.allclose(en.pool_vision_embedding([v] * n), v)

    def test_orthonormal_pair(self):
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0])
        pooled = en.pool_vision_embedding([e1, e2])
        assert np.allclose(pooled, (e1 + e2) / np.sqrt(2))

    def test_antipodal_raises(self):
        v = random_unit(np.random.default_rng(2), 4)
        with pytest.raises(en.ZeroVector):
            en.pool_vision_embedding([v, -v])

    def test_empty_and_ragged(self):
        with pytest.raises(ValueError):
            en.pool_vision_embedding([])
        with pytest.raises(en.DimensionMismatch):
            en.pool_vision_embedding([np.ones(3), np.ones(4)])


class TestScoreMatrix:
    def test_self_similarity(self):
        rng = np.random.default_rng(3)
        text = np.stack([np.stack([random_unit(rng, 6) for _ in range(2)]) for _ in range(3)])
        sims = en.score_matrix(text[0][0], text)
        assert sims[0][0] == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        vision = np.array([1.0, 0.0, 0.0])
        text = np.array([[[0.0, 1.0, 0.0]], [[0.0, 0.0, 1.0]]])
        sims = en.score_matrix(vision, text)
        assert np.allclose(sims, 0.0)

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(4)
        vision = random_unit(rng, 16)
        text = np.stack(
            [np.stack([random_unit(rng, 16) for _ in range(2)]) for _ in range(3)]
        )
        sims = en.score_matrix(vision, text)
        for c in range(3):
            for k in range(2):
                expected = sum(float(vision[d]) * float(text[c][k][d]) for d in range(16))
                assert abs(sims[c][k] - expected) < 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(en.DimensionMismatch):
            en.score_matrix(np.ones(4), np.ones((2, 3, 5)))


class TestEnsembleScores:
    def test_symmetric_binary(self):
        scores = en.ensemble_scores(np.array([[0.4], [0.4]]))
        assert np.allclose(scores, [0.5, 0.5])

    def test_analytic_softmax(self):
        cfg = en.EnsembleConfig(logit_scale=1.0)
        scores = en.ensemble_scores(np.array([[1.0], [0.0]]), cfg)
        e = math.e
        assert scores[0] == pytest.approx(e / (e + 1), abs=1e-9)
        assert scores[1] == pytest.approx(1 / (e + 1), abs=1e-9)
        assert scores[0] == pytest.approx(0.73106, abs=1e-5)

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        sims = rng.uniform(-1, 1, size=(3, 4))
        expected = slot_softmax_mean_oracle(sims.tolist(), 100.0)
        got = en.ensemble_scores(sims)
        assert np.abs(got - np.array(expected)).max() < 1e-9

    def test_sums_to_one_and_entries_are_probabilities(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            c, k = int(rng.integers(2, 9)), int(rng.integers(1, 6))
            scores = en.ensemble_scores(rng.uniform(-1, 1, size=(c, k)))
            assert abs(scores.sum() - 1.0) < 1e-9
            # strictly inside (0, 1) mathematically; the dominant entry may
            # round to 1.0 at logit scale 100
            assert ((scores > 0) & (scores <= 1.0)).all()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        sims = rng.uniform(-1, 1, size=(5, 3))
        perm = rng.permutation(5)
        base = en.ensemble_scores(sims)
        permuted = en.ensemble_scores(sims[perm])
        assert np.allclose(permuted, base[perm], atol=1e-12)

    def test_slot_shift_invariance(self):
        rng = np.random.default_rng(8)
        sims = rng.uniform(-1, 1, size=(4, 3))
        shifted = sims.copy()
        shifted[:, 1] += 0.37  # constant added within one slot
        assert np.abs(
            en.ensemble_scores(sims) - en.ensemble_scores(shifted)
        ).max() < 1e-9

    def test_monotonicity_in_single_similarity(self):
        rng = np.random.default_rng(9)
        sims = rng.uniform(-1, 1, size=(4, 3))
        bumped = sims.copy()
        bumped[2, 1] += 0.05
        assert en.ensemble_scores(bumped)[2] >= en.ensemble_scores(sims)[2]

    def test_ragged_rejected_in_default_mode(self):
        ragged = [[0.1, 0.2], [0.3]]
        with pytest.raises(en.RaggedK):
            en.ensemble_scores(ragged)

    def test_ragged_allowed_in_mean_mode(self):
        ragged = [[0.1, 0.2], [0.3]]
        cfg = en.EnsembleConfig(softmax_axis="mean_then_softmax")
        scores = en.ensemble_scores(ragged, cfg)
        assert abs(scores.sum() - 1.0) < 1e-12

    def test_mean_then_softmax_rectangular(self):
        rng = np.random.default_rng(10)
        sims = rng.uniform(-1, 1, size=(3, 4))
        cfg = en.EnsembleConfig(logit_scale=2.0, softmax_axis="mean_then_softmax")
        means = sims.mean(axis=1)
        z = 2.0 * means
        expected = np.exp(z - z.max())
        expected /= expected.sum()
        assert np.allclose(en.ensemble_scores(sims, cfg), expected, atol=1e-12)

    def test_k1_reduces_to_raw_argmax(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            c = int(rng.integers(2, 10))
            sims = rng.uniform(-1, 1, size=(c, 1))
            scores = en.ensemble_scores(sims)
            assert int(np.argmax(scores)) == int(np.argmax(sims[:, 0]))


class TestTopK:
    def test_top1(self):
        assert en.top_k([0.1, 0.7, 0.2], k=1).ranked == (1,)

    def test_tie_breaks_to_lower_index(self):
        prediction = en.top_k([0.5, 0.5], k=2)
        assert prediction.ranked == (0, 1)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            scores = rng.uniform(0, 1, size=10)
            got = en.top_k(scores, k=5)
            expected = sorted(range(10), key=lambda i: (-scores[i], i))[:5]
            assert list(got.ranked) == expected
            assert all(a >= b for a, b in zip(got.scores, got.scores[1:]))

    def test_k_bounds(self):
        with pytest.raises(ValueError):
            en.top_k([0.1, 0.2], k=3)


class TestPrediction:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            en.Prediction((1, 1))

    def test_rejects_increasing_scores(self):
        with pytest.raises(ValueError):
            en.Prediction((0, 1), (0.1, 0.2))
