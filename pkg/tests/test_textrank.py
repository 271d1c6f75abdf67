import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duet.metrics import coverage
from duet.textrank import (EmptySummaryError, centrality, similarity_matrix, split_sentences, textrank_scores,
                           textrank_summary)


def test_split_sentences_cases():
    assert split_sentences(["Great funk. Loved it!"]) == []
    assert split_sentences(["The bass line was superb."]) == ["The bass line was superb"]
    assert split_sentences([]) == []


def test_similarity_matrix_shape_and_formula():
    s = ["a b c", "b c d e", "x y z"]
    W = similarity_matrix(s)
    assert np.array_equal(W, W.T) and np.all(np.diag(W) == 0) and np.all(W >= 0)
    assert W[0, 1] == pytest.approx(2 / (math.log(3) + math.log(4)))
    assert W[0, 2] == 0


def _linear_oracle(W, d=0.85):
    # fixed point of s = (1-d) + d T^T s, solved directly
    n = len(W)
    out = W.sum(axis=1)
    T = np.where(out[:, None] > 0, W / np.where(out > 0, out, 1)[:, None], 1.0 / n)
    return np.linalg.solve(np.eye(n) - d * T.T, np.full(n, 1 - d))


def test_centrality_matches_oracle_on_hand_matrix():
    W = np.array([[0, 1, 0.5, 0],
                  [1, 0, 2, 0],
                  [0.5, 2, 0, 0.3],
                  [0, 0, 0.3, 0]], dtype=float)
    np.testing.assert_allclose(centrality(W, tol=1e-12, max_iter=1000), _linear_oracle(W), atol=1e-6)


def test_centrality_dangling_and_sum():
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = 1.0
    s = centrality(W, tol=1e-12, max_iter=1000)
    assert s.sum() == pytest.approx(3.0, abs=1e-6)
    np.testing.assert_allclose(s, _linear_oracle(W), atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_centrality_properties(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    W = np.triu(A, 1) + np.triu(A, 1).T
    s = centrality(W, tol=1e-12, max_iter=2000)
    assert np.all(s >= 0) and s.sum() == pytest.approx(n, abs=1e-6)
    perm = rng.permutation(n)
    np.testing.assert_allclose(centrality(W[np.ix_(perm, perm)], tol=1e-12, max_iter=2000), s[perm], atol=1e-8)


def test_summary_single_and_tie():
    assert textrank_summary(["The bass line was superb."], 1) == "The bass line was superb"
    texts = ["the funk groove was deep. the funk groove was deep. metal riffs shred loud tonight."]
    assert textrank_summary(texts, 1) == "the funk groove was deep"
    with pytest.raises(EmptySummaryError):
        textrank_summary(["Hi. Ok."], 2)
    with pytest.raises(ValueError):
        textrank_summary(["a b c"], 0)


def test_summary_restores_original_order():
    texts = ["zebra quick fox runs. apple pie is sweet. zebra quick fox again today. tiny dot is here."]
    out = textrank_summary(texts, 2)
    parts = out.split(". ")
    sentences = split_sentences(texts)
    assert [sentences.index(p) for p in parts] == sorted(sentences.index(p) for p in parts)


sentence = st.lists(st.sampled_from(["funk", "bass", "riff", "jazz", "soul", "the", "loud", "deep"]),
                     min_size=3, max_size=7).map(" ".join)


@settings(max_examples=200, deadline=None)
@given(st.lists(sentence, min_size=1, max_size=8), st.integers(1, 5))
def test_summary_is_extractive(sentences, n):
    texts = [". ".join(sentences) + "."]
    out = textrank_summary(texts, n)
    for part in out.split(". "):
        assert part in split_sentences(texts)
    assert coverage(out, texts) == 1.0


def test_scores_helper():
    s = textrank_scores(["a b c", "a b d", "x y z"])
    assert s[0] == pytest.approx(s[1]) and s[2] < s[0]
