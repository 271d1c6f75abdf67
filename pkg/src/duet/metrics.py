"""Rating, ranking and profile-diagnostic metrics."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import SplitDataset
from .text import token_set

STABLE, MODERATE, DIVERSE = "stable", "moderate", "diverse"


@dataclass(frozen=True)
class RatingPair:
    y: int
    y_hat: float | None
    parse_ok: bool = True


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _as_pairs(e) -> list[RatingPair]:
    out = []
    for p in e:
        out.append(p if isinstance(p, RatingPair) else RatingPair(*p))
    return out


def rating_metrics(e: Sequence, scale=(1, 5)) -> dict[str, float]:
    """MAE, RMSE, accuracy and macro-F1.

    Predictions are rounded half-up and clamped to the scale before the
    class-based metrics. A failed parse counts as an error of ``M`` and as a
    wrong class. Macro-F1 averages over the classes present in either the
    truth or the (rounded) predictions.
    """
    pairs = _as_pairs(e)
    if not pairs:
        raise ValueError("no rating pairs")
    lo, hi = scale
    M = float(hi - lo)
    errs = np.empty(len(pairs))
    y_true, y_pred = [], []
    for n, p in enumerate(pairs):
        y_true.append(int(p.y))
        if not p.parse_ok or p.y_hat is None:
            errs[n] = M
            y_pred.append(None)
        else:
            errs[n] = abs(p.y - p.y_hat)
            y_pred.append(min(hi, max(lo, _round_half_up(p.y_hat))))
    mae = float(np.mean(errs))
    rmse = float(math.sqrt(np.mean(errs ** 2)))
    correct = [t == q for t, q in zip(y_true, y_pred)]
    accuracy = sum(correct) / len(pairs)
    classes = sorted(set(y_true) | {q for q in y_pred if q is not None})
    f1s = []
    for c in classes:
        tp = sum(t == c and q == c for t, q in zip(y_true, y_pred))
        fp = sum(t != c and q == c for t, q in zip(y_true, y_pred))
        fn = sum(t == c and q != c for t, q in zip(y_true, y_pred))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return {"mae": mae, "rmse": rmse, "accuracy": float(accuracy), "f1": float(np.mean(f1s))}


@dataclass(frozen=True)
class CandidateSet:
    positive: str
    negatives: tuple[str, ...]
    scores: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "negatives", tuple(self.negatives))
        if self.positive in self.negatives:
            raise ValueError("positive item appears among negatives")
        if len(set(self.negatives)) != len(self.negatives):
            raise ValueError("duplicate negatives")

    def __len__(self):
        return 1 + len(self.negatives)


def positive_rank(c: CandidateSet) -> int:
    """1-based rank of the positive; ties with negatives rank it last."""
    if c.positive not in c.scores:
        raise KeyError(f"positive {c.positive!r} is unscored")
    s = c.scores[c.positive]
    ahead = 0
    for n in c.negatives:
        if n not in c.scores:
            raise KeyError(f"negative {n!r} is unscored")
        if c.scores[n] >= s:
            ahead += 1
    return ahead + 1


def ndcg_at_k(c: CandidateSet, k: int) -> float:
    if not 1 <= k <= len(c):
        raise ValueError(f"k={k} outside 1..{len(c)}")
    rank = positive_rank(c)
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def alignment(e_u, e_i) -> float:
    u = np.asarray(e_u, dtype=np.float64)
    v = np.asarray(e_i, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("alignment undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def coverage(profile: str, history_texts: Sequence[str]) -> float:
    """Share of unique profile tokens that also occur in the history."""
    p = token_set(profile)
    if not p:
        raise ValueError("profile has no tokens")
    h = set()
    for t in history_texts:
        h |= token_set(t)
    return len(p & h) / len(p)


def variance_groups(users: Mapping[str, Sequence[float]]) -> dict[str, str]:
    """Split users into thirds by population variance of their ratings.

    Cut points are the 100/3 and 200/3 percentiles (linear interpolation); a
    value equal to a cut point falls in the lower group.
    """
    var = {}
    for u, ratings in users.items():
        if len(ratings) < 2:
            warnings.warn(f"user {u!r} has fewer than two ratings; excluded", stacklevel=2)
            continue
        var[u] = float(np.var(np.asarray(ratings, dtype=np.float64)))
    if not var:
        return {}
    vals = np.array(list(var.values()))
    t1, t2 = np.percentile(vals, [100 / 3, 200 / 3])
    out = {}
    for u, v in var.items():
        out[u] = STABLE if v <= t1 else MODERATE if v <= t2 else DIVERSE
    return out


def random_negatives(split: SplitDataset, user_id: str, n: int = 9, rng_seed: int = 0) -> list[str]:
    """Uniform sample of train-known items the user never touched in any split."""
    seen = {it.item_id for it in split.by_user.get(user_id, ())}
    pool = sorted(split.train_items - seen)
    if len(pool) < n:
        raise ValueError(f"only {len(pool)} eligible negatives for {user_id!r}, need {n}")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in idx]


@dataclass
class EvalReport:
    mae: float
    rmse: float
    accuracy: float
    f1: float
    n: int
    ndcg: dict = field(default_factory=dict)
    alignment: float | None = None
    user_coverage: float | None = None
    item_coverage: float | None = None
    parse_failures: int = 0
    per_group: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["ndcg"] = {str(k): v for k, v in sorted(self.ndcg.items(), key=lambda kv: int(kv[0]))}
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["ndcg"] = {int(k): v for k, v in d.get("ndcg", {}).items()}
        return cls(**d)

    CSV_FIELDS = ("mae", "rmse", "accuracy", "f1", "alignment", "user_coverage", "item_coverage")

    def csv_row(self, label: str = "") -> str:
        vals = [label] + [("" if getattr(self, f) is None else f"{getattr(self, f):.4f}") for f in self.CSV_FIELDS]
        vals += [f"{self.ndcg[k]:.4f}" for k in sorted(self.ndcg)]
        return ",".join(vals)

    def csv_header(self) -> str:
        return ",".join(["label", *self.CSV_FIELDS] + [f"ndcg@{k}" for k in sorted(self.ndcg)])
