import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avsparse.errors import InvalidInput, ShapeError
from avsparse.numeric import (
    argsort_desc,
    derive_rng,
    make_rng,
    quartiles,
    sample_without_replacement,
    scaled_dot_attention,
    softmax,
)

from oracles import hand_quartile, naive_attention

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)
vectors = st.lists(finite, min_size=1, max_size=40)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_array_equal(softmax([0, 0, 0, 0]), [0.25] * 4)

    @pytest.mark.parametrize("x", [-1e6, 0.0, 3.5, 1e6])
    def test_single_element(self, x):
        assert softmax([x]).tolist() == [1.0]

    def test_matches_high_precision(self):
        # frozen from a 50-digit mpmath evaluation
        expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219]
        np.testing.assert_allclose(softmax([1, 2, 3]), expected, rtol=0, atol=1e-12)

        mpmath.mp.dps = 50
        ex = [mpmath.e**k for k in (1, 2, 3)]
        live = [float(v / sum(ex)) for v in ex]
        np.testing.assert_allclose(softmax([1, 2, 3]), live, rtol=0, atol=1e-12)

    def test_rejects_empty_and_non_finite(self):
        with pytest.raises(InvalidInput):
            softmax([])
        with pytest.raises(InvalidInput):
            softmax([0.0, np.nan])
        with pytest.raises(InvalidInput):
            softmax([np.inf])

    def test_large_logits_do_not_overflow(self):
        out = softmax([1000.0, 1000.0])
        np.testing.assert_allclose(out, [0.5, 0.5])

    @given(vectors)
    def test_probability_vector(self, v):
        p = softmax(v)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-9

    @given(vectors, st.floats(min_value=-100, max_value=100))
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(softmax(v), softmax(np.asarray(v) + c), rtol=0, atol=1e-12)


class TestAttention:
    def test_matching_key_wins(self):
        K = np.eye(8) * 10.0
        probs, _ = scaled_dot_attention(K[[5]], K, K)
        assert int(np.argmax(probs[0])) == 5

    def test_zero_logits_uniform(self):
        Q = np.zeros((2, 3))
        K = np.random.default_rng(0).normal(size=(5, 3))
        probs, _ = scaled_dot_attention(Q, K, K)
        np.testing.assert_allclose(probs, np.full((2, 5), 0.2), atol=1e-15)

    def test_matches_naive_loops(self):
        rng = np.random.default_rng(1)
        Q, K, V = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
        probs, ctx = scaled_dot_attention(Q, K, V)
        ref_p, ref_c = naive_attention(Q.tolist(), K.tolist(), V.tolist())
        np.testing.assert_allclose(probs, ref_p, rtol=0, atol=1e-9)
        np.testing.assert_allclose(ctx, ref_c, rtol=0, atol=1e-9)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize(
        "shapes",
        [((2, 3), (4, 2), (4, 2)), ((2, 3), (4, 3), (5, 3))],
        ids=["inner-dim", "kv-rows"],
    )
    def test_shape_errors(self, shapes):
        q, k, v = (np.ones(s) for s in shapes)
        with pytest.raises(ShapeError):
            scaled_dot_attention(q, k, v)


class TestQuartiles:
    def test_outlier_example(self):
        assert quartiles([1, 2, 3, 4, 100]) == (2.0, 3.0, 4.0)

    def test_constant(self):
        assert quartiles([7.5] * 4) == (7.5, 7.5, 7.5)

    def test_single(self):
        assert quartiles([5]) == (5.0, 5.0, 5.0)

    def test_interpolates(self):
        # positions 0.75, 1.5, 2.25 on [10, 20, 30, 40]
        assert quartiles([40, 10, 30, 20]) == (17.5, 25.0, 32.5)

    def test_empty(self):
        with pytest.raises(InvalidInput):
            quartiles([])

    @given(vectors)
    def test_matches_hand_formula(self, v):
        got = quartiles(v)
        for q, p in zip(got, (0.25, 0.5, 0.75)):
            assert q == pytest.approx(hand_quartile(v, p), abs=1e-9)
        assert got[0] <= got[1] <= got[2]

    @given(vectors, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, v, rnd):
        w = list(v)
        rnd.shuffle(w)
        assert quartiles(w) == quartiles(v)

    @given(vectors, st.floats(min_value=0, max_value=100))
    def test_monotone_under_shift(self, v, c):
        a, b = quartiles(v), quartiles(np.asarray(v) + c)
        assert all(y >= x - 1e-12 for x, y in zip(a, b))


class TestArgsortDesc:
    def test_simple(self):
        assert argsort_desc([0.1, 0.9, 0.5]).tolist() == [1, 2, 0]

    def test_ties_by_index(self):
        assert argsort_desc([7, 7, 7]).tolist() == [0, 1, 2]

    def test_matches_pair_sort(self):
        rng = np.random.default_rng(2)
        v = rng.integers(0, 20, size=100).astype(float)  # plenty of ties
        expected = sorted(range(100), key=lambda i: (-v[i], i))
        assert argsort_desc(v).tolist() == expected

    @given(vectors)
    def test_is_descending_permutation(self, v):
        out = argsort_desc(v)
        assert sorted(out.tolist()) == list(range(len(v)))
        vals = np.asarray(v)[out]
        assert np.all(vals[:-1] >= vals[1:])

    def test_rejects_nan(self):
        with pytest.raises(InvalidInput):
            argsort_desc([1.0, math.nan])


class TestSampling:
    def test_empty_draw(self):
        assert sample_without_replacement(10, 0, make_rng(1)).tolist() == []

    def test_full_draw(self):
        assert sample_without_replacement(10, 10, make_rng(1)).tolist() == list(range(10))

    def test_deterministic(self):
        a = sample_without_replacement(10, 5, make_rng(42))
        b = sample_without_replacement(10, 5, make_rng(42))
        assert a.tolist() == b.tolist()
        assert len(set(a.tolist())) == 5

    def test_too_many(self):
        with pytest.raises(InvalidInput):
            sample_without_replacement(3, 4, make_rng(0))

    def test_coverage_frequency(self):
        n, k, trials = 10, 3, 10_000
        counts = np.zeros(n)
        for seed in range(trials):
            counts[sample_without_replacement(n, k, make_rng(seed))] += 1
        p = k / n
        sigma = math.sqrt(trials * p * (1 - p))
        assert np.all(np.abs(counts - trials * p) <= 3 * sigma)


class TestRng:
    def test_pcg64_stream_is_pinned(self):
        # guards against a silent change of generator family
        assert make_rng(12345).integers(0, 2**32, size=3).tolist() == [
            int(x) for x in np.random.Generator(np.random.PCG64(12345)).integers(0, 2**32, size=3)
        ]
        assert make_rng(0).random() == pytest.approx(0.6369616873214543, abs=0)

    @pytest.mark.parametrize("bad", [-1, 2**64, 1.5, "7", True])
    def test_bad_seeds(self, bad):
        with pytest.raises(InvalidInput):
            make_rng(bad)

    def test_derived_streams_differ(self):
        a = derive_rng(3, 1).random(4)
        b = derive_rng(3, 2).random(4)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, derive_rng(3, 1).random(4))
