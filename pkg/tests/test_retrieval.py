import numpy as np
import pytest
from conftest import brute_csls, brute_mutual_nn
from hypothesis import given, settings
from hypothesis import strategies as st

from lnmap.embio import SeedDictionary
from lnmap.retrieval import (
    SimilarityIndex,
    cosine_matrix,
    csls_scores,
    induce_dictionary,
    mean_topk_similarity,
    precision_at_k,
    top_k_indices,
)


def csls(src, tgt, k):
    return csls_scores(src, SimilarityIndex.build(tgt, src, k))


class TestScores:
    def test_cosine_against_loops(self, rng):
        a, b = rng.normal(size=(6, 4)), rng.normal(size=(5, 4))
        ref = [[float(np.dot(u, v) / np.sqrt(np.dot(u, u) * np.dot(v, v))) for v in b] for u in a]
        np.testing.assert_allclose(cosine_matrix(a, b), ref, atol=1e-12)

    def test_csls_against_loops(self, rng):
        a, b = rng.normal(size=(12, 5)), rng.normal(size=(9, 5))
        np.testing.assert_allclose(csls(a, b, 3), brute_csls(a, b, 3), atol=1e-10)

    def test_orthonormal_triple(self):
        np.testing.assert_allclose(csls(np.eye(3), np.eye(3), 2), 2 * np.eye(3) - 1, atol=1e-15)

    def test_scale_invariant(self, rng):
        a, b = rng.normal(size=(8, 4)), rng.normal(size=(7, 4))
        scale = rng.uniform(0.1, 10, size=(8, 1))
        np.testing.assert_allclose(csls(a * scale, b * 3.0, 2), csls(a, b, 2), atol=1e-12)

    def test_chunking_does_not_matter(self, rng):
        a, b = rng.normal(size=(40, 4)), rng.normal(size=(30, 4))
        whole = mean_topk_similarity(a / np.linalg.norm(a, axis=1, keepdims=True),
                                     b / np.linalg.norm(b, axis=1, keepdims=True), 5)
        chunked = mean_topk_similarity(a / np.linalg.norm(a, axis=1, keepdims=True),
                                       b / np.linalg.norm(b, axis=1, keepdims=True), 5, chunk=7)
        np.testing.assert_allclose(whole, chunked, atol=1e-15)

    def test_k_larger_than_pool(self):
        with pytest.raises(ValueError, match="csls_k"):
            SimilarityIndex.build(np.eye(3), np.eye(3), 4)

    def test_zero_row(self):
        with pytest.raises(ValueError, match="row 1"):
            cosine_matrix(np.array([[1.0, 0], [0, 0]]), np.eye(2))


class TestInduction:
    def test_hand_example(self):
        src = np.array([[1.0, 0.0], [0.8, 0.6]])
        out = induce_dictionary(src, np.eye(2), csls_k=1)
        assert out.pairs.tolist() == [[0, 0]]
        assert out.scores.tolist() == pytest.approx([0.0], abs=1e-15)

    def test_identical_spaces_recover_identity(self, rng):
        x = rng.normal(size=(30, 6))
        out = induce_dictionary(x, x, csls_k=5)
        assert sorted(map(tuple, out.pairs.tolist())) == [(i, i) for i in range(30)]

    def test_against_double_argmax(self, rng):
        a, b = rng.normal(size=(50, 8)), rng.normal(size=(50, 8))
        out = induce_dictionary(a, b, csls_k=10, chunk=13)
        assert set(map(tuple, out.pairs.tolist())) == brute_mutual_nn(brute_csls(a, b, 10))
        assert np.all(np.diff(out.scores) <= 0)

    def test_symmetric_under_swap(self, rng):
        a, b = rng.normal(size=(25, 5)), rng.normal(size=(20, 5))
        fwd = {(i, j) for i, j in induce_dictionary(a, b, 4).pairs.tolist()}
        bwd = {(j, i) for i, j in induce_dictionary(b, a, 4).pairs.tolist()}
        assert fwd == bwd

    def test_top(self, rng):
        x = rng.normal(size=(10, 4))
        out = induce_dictionary(x, x, 2)
        assert len(out.top(3)) == 3
        assert out.top(3).pairs.tolist() == out.pairs[:3].tolist()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 15), st.integers(2, 15), st.integers(0, 2**32 - 1))
    def test_one_to_one(self, n, m, seed):
        rng = np.random.default_rng(seed)
        out = induce_dictionary(rng.normal(size=(n, 3)), rng.normal(size=(m, 3)), csls_k=1)
        assert len(set(out.pairs[:, 0])) == len(out)
        assert len(set(out.pairs[:, 1])) == len(out)


class TestTopK:
    def test_ties_prefer_lower_index(self):
        scores = np.array([[0.5, 0.9, 0.9, 0.1]])
        assert top_k_indices(scores, 3).tolist() == [[1, 2, 0]]

    def test_matches_stable_sort(self, rng):
        scores = rng.integers(0, 4, size=(20, 12)).astype(float)
        ref = np.argsort(-scores, axis=1, kind="stable")[:, :5]
        np.testing.assert_array_equal(top_k_indices(scores, 5), ref)


class TestPrecision:
    def test_perfect_and_shuffled(self):
        gold = SeedDictionary([(0, 0), (1, 1), (2, 2)])
        rep = precision_at_k(np.eye(3), np.eye(3), gold, ks=(1,), csls_k=1, method="cosine")
        assert rep.p_at == {1: 1.0}
        rep = precision_at_k(np.eye(3)[[1, 2, 0]], np.eye(3), gold, ks=(1,), method="cosine")
        assert rep.p_at == {1: 0.0}

    def test_any_gold_target_counts(self):
        gold = SeedDictionary([(0, 1), (0, 0)])
        rep = precision_at_k(np.eye(2), np.eye(2), gold, ks=(1,), method="cosine")
        assert rep.p_at[1] == 1.0
        assert rep.evaluated_count == 1

    def test_half(self):
        q = np.array([[1.0, 0.0], [1.0, 0.1]])
        gold = SeedDictionary([(0, 0), (1, 1)])
        rep = precision_at_k(q, np.eye(2), gold, ks=(1, 2), method="cosine")
        assert rep.p_at == {1: 0.5, 2: 1.0}

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            precision_at_k(np.eye(2), np.eye(2), SeedDictionary([(0, 0)]), method="dot")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(3, 20), st.integers(0, 2**32 - 1), st.sampled_from(["csls", "cosine"]))
    def test_monotone_in_k(self, n, seed, method):
        rng = np.random.default_rng(seed)
        q, t = rng.normal(size=(n, 4)), rng.normal(size=(n, 4))
        gold = SeedDictionary([(i, int(rng.integers(n))) for i in range(n)])
        p = precision_at_k(q, t, gold, ks=(1, 2, 3), csls_k=2, method=method).p_at
        assert 0 <= p[1] <= p[2] <= p[3] <= 1
