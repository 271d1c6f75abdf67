"""TextRank sentence extraction for the non-generative profile baseline."""

from __future__ import annotations

import math
import re
from typing import Sequence

import numpy as np

from .text import token_set, tokenize

_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")
MIN_TOKENS = 3
_DENOM_FLOOR = 1e-9


class EmptySummaryError(ValueError):
    pass


def split_sentences(texts: Sequence[str]) -> list[str]:
    """Split on ., ! or ? followed by whitespace; drop sentences under 3 tokens."""
    out = []
    for text in texts:
        for piece in _SPLIT_RE.split(text.strip()):
            s = piece.strip().rstrip(".!?").strip()
            if len(tokenize(s)) >= MIN_TOKENS:
                out.append(s)
    return out


def similarity_matrix(sentences: Sequence[str]) -> np.ndarray:
    """Token overlap normalised by ``ln|s_i| + ln|s_j|`` over unique tokens."""
    sets = [token_set(s) for s in sentences]
    n = len(sets)
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            overlap = len(sets[i] & sets[j])
            if overlap == 0:
                continue
            denom = max(math.log(len(sets[i])) + math.log(len(sets[j])), _DENOM_FLOOR)
            W[i, j] = W[j, i] = overlap / denom
    return W


def centrality(W: np.ndarray, damping: float = 0.85, tol: float = 1e-6, max_iter: int = 200) -> np.ndarray:
    """Damped weighted PageRank, scaled so scores sum to the node count.

    Nodes without edges spread their score uniformly over all nodes.
    """
    if not 0 < damping < 1:
        raise ValueError("damping must lie in (0, 1)")
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    out = W.sum(axis=1)
    dangling = out == 0
    T = np.divide(W, out[:, None], out=np.zeros_like(W), where=~dangling[:, None])
    T[dangling] = 1.0 / n
    s = np.ones(n)
    for _ in range(max_iter):
        new = (1 - damping) + damping * (T.T @ s)
        if np.abs(new - s).sum() < tol:
            s = new
            break
        s = new
    return s


def textrank_scores(sentences: Sequence[str], damping: float = 0.85, tol: float = 1e-6,
                    max_iter: int = 200) -> np.ndarray:
    return centrality(similarity_matrix(sentences), damping, tol, max_iter)


def textrank_summary(texts: Sequence[str], n_sentences: int = 5, damping: float = 0.85, tol: float = 1e-6,
                     max_iter: int = 200) -> str:
    """Top-``n_sentences`` sentences by centrality, in original order, joined by ". "."""
    if n_sentences < 1:
        raise ValueError("n_sentences must be >= 1")
    sentences = split_sentences(texts)
    if not sentences:
        raise EmptySummaryError("no sentence survived preprocessing")
    scores = textrank_scores(sentences, damping, tol, max_iter)
    # round away iteration noise so equal-centrality sentences tie on position
    ranked = sorted(range(len(sentences)), key=lambda i: (-round(scores[i], 9), i))
    chosen = sorted(ranked[:n_sentences])
    return ". ".join(sentences[i] for i in chosen)
