"""Evaluation protocol: profile every test interaction, predict, score.

A *profiler* maps a :class:`HistoryPair` to a (user profile, item profile)
pair of strings. The learned policy is run greedily; the ``10H`` and
``textrank`` baselines build profiles from raw or extracted history text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import HistoryPair, Interaction, SplitDataset, build_history_pair
from .ease import RatingMatrix, fit_ease, hard_negatives
from .llmgateway import HashedBowEmbedder
from .metrics import (CandidateSet, EvalReport, RatingPair, alignment, coverage, ndcg_at_k, random_negatives,
                      rating_metrics, variance_groups)
from .pipeline import GrammarError
from .recommender import BackendError
from .textrank import EmptySummaryError, textrank_summary

logger = logging.getLogger(__name__)

Profiler = Callable[[HistoryPair], tuple[str, str]]

RAW_HISTORY_LENGTH = 10
_EMPTY = "no prior history"


class EnvironmentExhausted(RuntimeError):
    pass


@dataclass
class EvalOptions:
    history_user: int = 30
    history_item: int = 30
    k_list: Sequence[int] = (1, 5, 10)
    negatives: str = "random"  # random | ease | none
    n_negatives: int = 9
    seed: int = 0
    max_instances: int | None = None
    ease_lambda: float = 100.0
    env_retries: int = 2
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.negatives not in ("random", "ease", "none"):
            raise ValueError(f"unknown negative mode {self.negatives!r}")
        if self.n_negatives < 0:
            raise ValueError("n_negatives must be >= 0")
        size = 1 + (self.n_negatives if self.negatives != "none" else 0)
        bad = [k for k in self.k_list if not 1 <= k <= size]
        if bad:
            raise ValueError(f"K values {bad} outside 1..{size}")


def policy_profiler(policy) -> Profiler:
    """Greedy execution of the learned policy."""
    def run(state: HistoryPair):
        b = policy.greedy(state)
        return b.user_profile.text, b.item_profile.text
    return run


def raw_history_profiler(n: int = RAW_HISTORY_LENGTH) -> Profiler:
    def run(state: HistoryPair):
        u = " ".join(it.text for it in state.user_history[:n]).strip() or _EMPTY
        i = " ".join(it.text for it in state.item_history[:n]).strip() or _EMPTY
        return u, i
    return run


def textrank_profiler(n_sentences: int = 5, user_side: bool = True, item_side: bool = True) -> Profiler:
    raw = raw_history_profiler(10**9)

    def summarize(hist):
        try:
            return textrank_summary([it.text for it in hist], n_sentences)
        except EmptySummaryError:
            return " ".join(it.text for it in hist).strip() or _EMPTY

    def run(state: HistoryPair):
        ru, ri = raw(state)
        u = summarize(state.user_history) if user_side else ru
        i = summarize(state.item_history) if item_side else ri
        return u, i
    return run


def _predict(env, pu: str, pi: str, retries: int):
    for attempt in range(retries + 1):
        try:
            return env.predict(pu, pi)
        except BackendError as exc:
            logger.warning("prediction failed (attempt %d): %s", attempt + 1, exc)
    raise EnvironmentExhausted("environment kept failing; giving up")


def _instance_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def evaluate(split: SplitDataset, profiler: Profiler, env, opts: EvalOptions | None = None,
             embedder=None, targets: Sequence[Interaction] | None = None) -> EvalReport:
    opts = opts or EvalOptions()
    embedder = embedder or HashedBowEmbedder()
    targets = list(targets if targets is not None else split.test.interactions)
    if opts.max_instances is not None:
        targets = targets[:opts.max_instances]
    if not targets:
        raise ValueError("no evaluation instances")
    scale = split.scale

    ease_model = X = None
    if opts.negatives == "ease" and opts.n_negatives > 0:
        X = RatingMatrix.from_dataset(split.train)
        ease_model = fit_ease(X, opts.ease_lambda)

    def profiles(user_id, item_id, ts, rating):
        hp = build_history_pair(split, Interaction(user_id, item_id, rating, ts),
                                opts.history_user, opts.history_item)
        try:
            return hp, profiler(hp)
        except GrammarError:
            return hp, None

    pairs, per_user = [], {}
    aligns, ucov, icov = [], [], []
    ndcg = {k: [] for k in opts.k_list}
    failures = 0
    for idx, t in enumerate(targets):
        hp, prof = profiles(t.user_id, t.item_id, t.timestamp, t.rating)
        if prof is None:
            failures += 1
            pairs.append(RatingPair(t.rating, None, False))
            pos_score = -np.inf
        else:
            pu, pi = prof
            pred = _predict(env, pu, pi, opts.env_retries)
            failures += not pred.parse_ok
            pairs.append(RatingPair(t.rating, pred.score, pred.parse_ok))
            pos_score = pred.score if pred.parse_ok else -np.inf
            eu, ei = embedder.embed([pu, pi])
            if np.linalg.norm(eu) > 0 and np.linalg.norm(ei) > 0:
                aligns.append(alignment(eu, ei))
            try:
                ucov.append(coverage(pu, [it.text for it in hp.user_history]))
            except ValueError:
                pass
            try:
                icov.append(coverage(pi, [it.text for it in hp.item_history]))
            except ValueError:
                pass
        per_user.setdefault(t.user_id, []).append(len(pairs) - 1)

        if opts.negatives == "none" or opts.n_negatives == 0:
            negs = []
        elif opts.negatives == "random":
            negs = random_negatives(split, t.user_id, opts.n_negatives, _instance_seed(opts.seed, idx))
        else:
            seen = {X.item_index[it.item_id] for it in split.by_user[t.user_id] if it.item_id in X.item_index}
            negs = [X.item_ids[j] for j in hard_negatives(ease_model, X, X.user_index[t.user_id],
                                                          opts.n_negatives, exclude=seen)]
        scores = {t.item_id: pos_score}
        for c in negs:
            _, cprof = profiles(t.user_id, c, t.timestamp, t.rating)
            if cprof is None:
                scores[c] = -np.inf
                continue
            p = _predict(env, cprof[0], cprof[1], opts.env_retries)
            scores[c] = p.score if p.parse_ok else -np.inf
        cs = CandidateSet(t.item_id, tuple(negs), scores)
        for k in opts.k_list:
            ndcg[k].append(ndcg_at_k(cs, min(k, len(cs))))

    base = rating_metrics(pairs, scale)
    train_ratings = {}
    for it in split.train.interactions:
        train_ratings.setdefault(it.user_id, []).append(it.rating)
    eligible = {u: r for u, r in train_ratings.items() if len(r) >= 2 and u in per_user}
    groups = variance_groups(eligible)
    per_group = {}
    for g in ("stable", "moderate", "diverse"):
        rows = [pairs[i] for u, gg in groups.items() if gg == g for i in per_user[u]]
        if rows:
            per_group[g] = {"n": len(rows), **rating_metrics(rows, scale)}

    return EvalReport(
        mae=base["mae"], rmse=base["rmse"], accuracy=base["accuracy"], f1=base["f1"], n=len(pairs),
        ndcg={k: float(np.mean(v)) for k, v in ndcg.items()},
        alignment=float(np.mean(aligns)) if aligns else None,
        user_coverage=float(np.mean(ucov)) if ucov else None,
        item_coverage=float(np.mean(icov)) if icov else None,
        parse_failures=failures,
        per_group=per_group,
        meta={"negatives": opts.negatives, "n_negatives": opts.n_negatives, "seed": opts.seed, **opts.meta},
    )
