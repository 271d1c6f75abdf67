import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import f1_score

from duet.corpus import Dataset, Interaction, SplitDataset
from duet.metrics import (CandidateSet, EvalReport, RatingPair, alignment, coverage, ndcg_at_k, positive_rank,
                          random_negatives, rating_metrics, variance_groups)


# ------------------------------------------------------------------ ratings

def test_perfect_predictions():
    m = rating_metrics([(1, 1.0), (3, 3.0), (5, 5.0)])
    assert m == {"mae": 0.0, "rmse": 0.0, "accuracy": 1.0, "f1": 1.0}


def test_arithmetic_case():
    m = rating_metrics([(5, 5.0), (5, 4.0)])
    assert m["mae"] == 0.5 and m["rmse"] == pytest.approx(math.sqrt(0.5)) and m["accuracy"] == 0.5


def test_three_class_macro_f1_by_hand():
    # truth 1,1,2,2,3,3 ; predicted 1,2,2,2,3,1
    # class 1: tp1 fp1 fn1 -> 0.5 ; class 2: tp2 fp1 fn0 -> 0.8 ; class 3: tp1 fp0 fn1 -> 2/3
    y = [1, 1, 2, 2, 3, 3]
    p = [1.0, 2.0, 2.0, 2.0, 3.0, 1.0]
    m = rating_metrics(list(zip(y, p)))
    assert m["f1"] == pytest.approx((0.5 + 0.8 + 2 / 3) / 3, abs=1e-12)


def test_round_half_up_and_clamp():
    m = rating_metrics([(3, 2.5), (5, 7.2), (1, -3.0)])
    assert m["accuracy"] == 1.0


def test_parse_failure_is_max_error_and_wrong():
    m = rating_metrics([RatingPair(5, None, False), RatingPair(3, 3.0)])
    assert m["mae"] == 2.0 and m["accuracy"] == 0.5


def test_empty_input():
    with pytest.raises(ValueError):
        rating_metrics([])


pairs_st = st.lists(st.tuples(st.integers(1, 5), st.floats(0, 6)), min_size=1, max_size=40)


@settings(max_examples=200)
@given(pairs_st)
def test_f1_matches_sklearn_and_mae_le_rmse(pairs):
    m = rating_metrics(pairs)
    y = [a for a, _ in pairs]
    p = [min(5, max(1, math.floor(b + 0.5))) for _, b in pairs]
    assert m["f1"] == pytest.approx(f1_score(y, p, average="macro", zero_division=0), abs=1e-12)
    assert m["mae"] <= m["rmse"] + 1e-12
    assert 0 <= m["accuracy"] <= 1 and 0 <= m["f1"] <= 1


# ------------------------------------------------------------------ ranking

def cset(pos_score, neg_scores):
    negs = tuple(f"n{k}" for k in range(len(neg_scores)))
    return CandidateSet("p", negs, {"p": pos_score, **dict(zip(negs, neg_scores))})


def test_ndcg_cases():
    assert ndcg_at_k(cset(0.9, [0.1] * 9), 1) == 1.0
    c = cset(0.5, [0.9, 0.8] + [0.1] * 7)
    assert ndcg_at_k(c, 5) == 0.5 and ndcg_at_k(c, 1) == 0.0
    assert ndcg_at_k(cset(1.0, [1.0] * 9), 10) == 1 / math.log2(11)


def test_ndcg_contract_errors():
    with pytest.raises(ValueError):
        ndcg_at_k(cset(1.0, [0.0]), 3)
    with pytest.raises(KeyError):
        ndcg_at_k(CandidateSet("p", ("a",), {"a": 1.0}), 1)
    with pytest.raises(ValueError):
        CandidateSet("p", ("p",), {"p": 1.0})


def brute_ndcg(c, k):
    # full sort with the positive placed after every equal-scored negative
    order = sorted([(c.scores[n], 1, n) for n in c.negatives] + [(c.scores[c.positive], 0, c.positive)],
                   key=lambda t: (-t[0], -t[1]))
    for rank, (_, _, name) in enumerate(order, 1):
        if name == c.positive:
            return 1 / math.log2(rank + 1) if rank <= k else 0.0


@settings(max_examples=300)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=12))
def test_ndcg_brute_force_and_monotone(scores):
    c = cset(scores[0], scores[1:])
    vals = [ndcg_at_k(c, k) for k in range(1, len(c) + 1)]
    assert vals == [brute_ndcg(c, k) for k in range(1, len(c) + 1)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert positive_rank(c) == 1 + sum(s >= scores[0] for s in scores[1:])


# -------------------------------------------------------------- diagnostics

def test_alignment_cases():
    assert alignment([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert alignment([1, 0], [0, 1]) == 0.0
    assert alignment([1, 1, 0], [1, 0, 0]) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(ValueError):
        alignment([0, 0], [1, 0])


@settings(max_examples=200)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.floats(0.01, 100))
def test_alignment_scale_invariant(u, v, c):
    if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
        return
    a = alignment(u, v)
    assert -1 <= a <= 1
    assert alignment(np.array(u) * c, v) == pytest.approx(a, abs=1e-9)


def test_coverage_cases():
    assert coverage("funk rock fan", ["I am a funk fan", "rock on"]) == 1.0
    assert coverage("jazz", ["funk"]) == 0.0
    assert coverage("funk rock fan", ["funk", "fan"]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        coverage("!!!", ["x"])


words = st.lists(st.sampled_from(["funk", "rock", "jazz", "fan", "bass", "the"]), min_size=1, max_size=6)


@settings(max_examples=200)
@given(words, st.lists(words, max_size=4), words)
def test_coverage_monotone_in_history(profile, history, extra):
    hist = [" ".join(h) for h in history]
    c = coverage(" ".join(profile), hist)
    assert 0 <= c <= 1
    assert coverage(" ".join(profile), hist + [" ".join(extra)]) >= c


# ------------------------------------------------------------------- groups

def test_variance_groups_cases():
    same = {f"u{n}": [1, 3] for n in range(4)}
    assert set(variance_groups(same).values()) == {"stable"}
    g = variance_groups({"a": [3, 3], "b": [2, 4], "c": [1, 5]})
    assert g == {"a": "stable", "b": "moderate", "c": "diverse"}


def test_variance_groups_nine_users():
    # population variances 0, 0.25, 1, 2.25, 4, 6.25, 9, 12.25, 16
    users = {f"u{k}": [3 - k / 2, 3 + k / 2] for k in range(9)}
    g = variance_groups(users)
    var = np.array([(k / 2) ** 2 for k in range(9)])
    t1, t2 = np.percentile(var, [100 / 3, 200 / 3])
    for k in range(9):
        expected = "stable" if var[k] <= t1 else "moderate" if var[k] <= t2 else "diverse"
        assert g[f"u{k}"] == expected
    assert sorted(list(g.values()).count(x) for x in ("stable", "moderate", "diverse")) == [3, 3, 3]


def test_variance_groups_excludes_short_users():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        g = variance_groups({"a": [3], "b": [1, 2]})
    assert "a" not in g and any("fewer than two" in str(x.message) for x in w)


# ---------------------------------------------------------------- negatives

def _split():
    rows = [Interaction(f"u{u}", f"i{i}", 3, u * 10 + i) for u in range(3) for i in range(6) if (u + i) % 2 == 0]
    rows.append(Interaction("u0", "i1", 3, 100))
    d = Dataset(tuple(rows))
    return SplitDataset(d, Dataset(()), Dataset((Interaction("u1", "i3", 3, 200),)))


def test_random_negatives():
    s = _split()
    eligible = sorted(s.train_items - {it.item_id for it in s.by_user["u1"]})
    assert sorted(random_negatives(s, "u1", len(eligible), 0)) == eligible
    assert random_negatives(s, "u0", 2, 9) == random_negatives(s, "u0", 2, 9)
    for seed in range(50):
        neg = random_negatives(s, "u0", 2, seed)
        assert not set(neg) & {it.item_id for it in s.by_user["u0"]}
    with pytest.raises(ValueError):
        random_negatives(s, "u1", len(eligible) + 1, 0)


def test_report_round_trip():
    r = EvalReport(0.5, 0.7, 0.6, 0.4, 10, {1: 0.2, 10: 0.6}, 0.3, 1.0, 0.9, 0, {}, {"m": "x"})
    assert EvalReport.from_json(r.to_json()) == r
    assert r.csv_header().split(",")[-2:] == ["ndcg@1", "ndcg@10"]
    assert r.csv_row("x").startswith("x,0.5000")
