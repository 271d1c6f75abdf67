"""Review-corpus ingestion and curation.

Raw JSON-lines review dumps are mapped onto :class:`Interaction` records,
filtered to a k-core, split chronologically with cold-start pruning, and
turned into per-target (user history, item history) pairs.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from typing import Iterable

logger = logging.getLogger(__name__)

SCHEMA_NAME = "duet.corpus"
SCHEMA_VERSION = 1
MALFORMED_TOLERANCE = 0.5


class CorpusFormatError(ValueError):
    """Input does not match the declared schema or file version."""


class ColdStartError(LookupError):
    """Target user or item never appears in the training split."""


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: int
    timestamp: int
    text: str = ""
    summary: str | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")

    @property
    def order_key(self) -> tuple:
        return (self.timestamp, self.user_id, self.item_id)


@dataclass(frozen=True)
class Dataset:
    interactions: tuple[Interaction, ...]
    scale: tuple[int, int] = (1, 5)
    name: str = "dataset"
    malformed_count: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "interactions", tuple(self.interactions))
        lo, hi = self.scale
        object.__setattr__(self, "scale", (int(lo), int(hi)))
        if lo >= hi:
            raise ValueError(f"degenerate rating scale {self.scale}")
        for it in self.interactions:
            if not lo <= it.rating <= hi:
                raise ValueError(f"rating {it.rating} outside scale {self.scale}: {it}")

    def __len__(self):
        return len(self.interactions)

    def __iter__(self):
        return iter(self.interactions)

    @property
    def users(self) -> set[str]:
        return {it.user_id for it in self.interactions}

    @property
    def items(self) -> set[str]:
        return {it.item_id for it in self.interactions}

    def replace(self, interactions: Iterable[Interaction], name: str | None = None) -> "Dataset":
        return Dataset(tuple(interactions), self.scale, name or self.name)


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    valid: Dataset
    test: Dataset
    split_policy: dict = field(default_factory=dict)

    @property
    def scale(self) -> tuple[int, int]:
        return self.train.scale

    @cached_property
    def all_interactions(self) -> tuple[Interaction, ...]:
        return self.train.interactions + self.valid.interactions + self.test.interactions

    @cached_property
    def by_user(self) -> dict[str, list[Interaction]]:
        out = defaultdict(list)
        for it in self.all_interactions:
            out[it.user_id].append(it)
        return dict(out)

    @cached_property
    def by_item(self) -> dict[str, list[Interaction]]:
        out = defaultdict(list)
        for it in self.all_interactions:
            out[it.item_id].append(it)
        return dict(out)

    @cached_property
    def train_users(self) -> frozenset[str]:
        return frozenset(self.train.users)

    @cached_property
    def train_items(self) -> frozenset[str]:
        return frozenset(self.train.items)

    def statistics(self) -> dict[str, int]:
        return {
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
            "users": len({it.user_id for it in self.all_interactions}),
            "items": len({it.item_id for it in self.all_interactions}),
            "interactions": len(self.all_interactions),
        }


@dataclass(frozen=True)
class HistoryPair:
    user_history: tuple[Interaction, ...]
    item_history: tuple[Interaction, ...]
    target: Interaction

    @property
    def state_id(self) -> str:
        t = self.target
        return f"{t.user_id}|{t.item_id}|{t.timestamp}"


# --------------------------------------------------------------------- ingest


@dataclass(frozen=True)
class FieldMapping:
    user: str
    item: str
    rating: str
    timestamp: str
    text: str | None = None
    summary: str | None = None
    # "epoch" (integer seconds) or "date" (ISO-ish string, parsed as UTC)
    timestamp_kind: str = "epoch"


SCHEMAS = {
    "amazon": FieldMapping("reviewerID", "asin", "overall", "unixReviewTime", "reviewText", "summary"),
    "yelp": FieldMapping("user_id", "business_id", "stars", "date", "text", None, "date"),
    "canonical": FieldMapping("user", "item", "rating", "ts", "text", "summary"),
}


def _parse_timestamp(value, kind: str) -> int:
    if kind == "date":
        dt = datetime.fromisoformat(str(value).strip().replace("Z", "+00:00"))
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    if isinstance(value, bool):
        raise ValueError("boolean timestamp")
    ts = float(value)
    if not ts.is_integer():
        raise ValueError(f"non-integral timestamp {value!r}")
    return int(ts)


def _parse_rating(value, scale) -> int:
    if isinstance(value, bool):
        raise ValueError("boolean rating")
    r = float(value)
    if not r.is_integer():
        raise ValueError(f"non-integral rating {value!r}")
    r = int(r)
    if not scale[0] <= r <= scale[1]:
        raise ValueError(f"rating {r} outside {scale}")
    return r


def _record_to_interaction(rec: dict, mapping: FieldMapping, scale) -> Interaction:
    text = rec.get(mapping.text, "") if mapping.text else ""
    summary = rec.get(mapping.summary) if mapping.summary else None
    return Interaction(
        user_id=str(rec[mapping.user]),
        item_id=str(rec[mapping.item]),
        rating=_parse_rating(rec[mapping.rating], scale),
        timestamp=_parse_timestamp(rec[mapping.timestamp], mapping.timestamp_kind),
        text="" if text is None else str(text),
        summary=None if summary is None else str(summary),
    )


def ingest(path, fmt: str | FieldMapping = "amazon", scale=(1, 5), name: str | None = None) -> Dataset:
    """Load a JSON-lines review dump.

    ``fmt`` is a preset name from :data:`SCHEMAS` or an explicit
    :class:`FieldMapping`. Blank lines are skipped; lines that fail to parse
    or map are counted in ``Dataset.malformed_count``. More than half of the
    non-blank lines being malformed raises :class:`CorpusFormatError`, which
    almost always means the wrong schema mapping was chosen.
    """
    mapping = SCHEMAS[fmt] if isinstance(fmt, str) else fmt
    interactions, malformed, total = [], 0, 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            total += 1
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("not a JSON object")
                if rec.get("schema") == SCHEMA_NAME:
                    # canonical header line
                    total -= 1
                    continue
                interactions.append(_record_to_interaction(rec, mapping, scale))
            except (ValueError, KeyError, TypeError) as exc:
                malformed += 1
                logger.debug("%s:%d malformed: %s", path, lineno, exc)
    if total and malformed / total > MALFORMED_TOLERANCE:
        raise CorpusFormatError(
            f"{path}: {malformed}/{total} lines malformed; check the field mapping"
        )
    if malformed:
        logger.warning("%s: skipped %d malformed line(s)", path, malformed)
    ds_name = name or os.path.splitext(os.path.basename(str(path)))[0]
    return Dataset(tuple(interactions), tuple(scale), ds_name, malformed_count=malformed)


# ------------------------------------------------------------------ curation


def k_core_filter(d: Dataset, k: int) -> Dataset:
    """Iteratively drop interactions of users/items with fewer than ``k``
    interactions until every survivor has at least ``k`` on both sides."""
    if k < 1:
        raise ValueError("k must be >= 1")
    current = list(d.interactions)
    while True:
        users = Counter(it.user_id for it in current)
        items = Counter(it.item_id for it in current)
        kept = [it for it in current if users[it.user_id] >= k and items[it.item_id] >= k]
        if len(kept) == len(current):
            break
        current = kept
    return d.replace(current)


def _sorted_chronologically(d: Dataset) -> list[Interaction]:
    return sorted(d.interactions, key=lambda it: it.order_key)


def _prune_cold_start(train: list[Interaction], rest: list[Interaction]) -> list[Interaction]:
    users = {it.user_id for it in train}
    items = {it.item_id for it in train}
    return [it for it in rest if it.user_id in users and it.item_id in items]


def timestamp_split(d: Dataset, valid_frac: float = 0.1, test_frac: float = 0.1) -> SplitDataset:
    """Chronological split by quantile fractions, then cold-start pruning.

    Equal timestamps are ordered by ``(user_id, item_id)``.
    """
    if not (valid_frac >= 0 and test_frac >= 0 and 0 < valid_frac + test_frac < 1):
        raise ValueError(f"invalid split fractions ({valid_frac}, {test_frac})")
    if len(d) == 0:
        raise ValueError("cannot split an empty dataset")
    ordered = _sorted_chronologically(d)
    n = len(ordered)
    n_test = math.floor(n * test_frac + 1e-9)
    n_valid = math.floor(n * valid_frac + 1e-9)
    n_train = n - n_valid - n_test
    train = ordered[:n_train]
    valid = ordered[n_train:n_train + n_valid]
    test = ordered[n_train + n_valid:]
    policy = {
        "mode": "fraction",
        "valid_frac": valid_frac,
        "test_frac": test_frac,
        "n_before_pruning": [len(train), len(valid), len(test)],
    }
    return _finish_split(d, train, valid, test, policy)


def timestamp_split_at(d: Dataset, valid_start: int, test_start: int) -> SplitDataset:
    """Chronological split at absolute boundaries: ``ts < valid_start`` is
    train, ``valid_start <= ts < test_start`` valid, the rest test."""
    if valid_start > test_start:
        raise ValueError("valid_start must not exceed test_start")
    ordered = _sorted_chronologically(d)
    train = [it for it in ordered if it.timestamp < valid_start]
    valid = [it for it in ordered if valid_start <= it.timestamp < test_start]
    test = [it for it in ordered if it.timestamp >= test_start]
    policy = {
        "mode": "boundary",
        "valid_start": valid_start,
        "test_start": test_start,
        "n_before_pruning": [len(train), len(valid), len(test)],
    }
    return _finish_split(d, train, valid, test, policy)


def _finish_split(d, train, valid, test, policy) -> SplitDataset:
    valid = _prune_cold_start(train, valid)
    test = _prune_cold_start(train, test)
    return SplitDataset(
        train=d.replace(train, f"{d.name}.train"),
        valid=d.replace(valid, f"{d.name}.valid"),
        test=d.replace(test, f"{d.name}.test"),
        split_policy=policy,
    )


def _recent_first(records: Iterable[Interaction]) -> list[Interaction]:
    # most recent first; equal timestamps keep (user_id, item_id) ascending
    return sorted(records, key=lambda it: (-it.timestamp, it.user_id, it.item_id))


def build_history_pair(split: SplitDataset, target: Interaction, L_u: int = 30, L_i: int = 30) -> HistoryPair:
    """Histories strictly before ``target.timestamp``.

    The item side only uses other users' reviews. Both lists are most recent
    first and truncated to ``L_u`` / ``L_i``.
    """
    if L_u < 1 or L_i < 1:
        raise ValueError("history lengths must be >= 1")
    if target.user_id not in split.train_users:
        raise ColdStartError(f"user {target.user_id!r} absent from train")
    if target.item_id not in split.train_items:
        raise ColdStartError(f"item {target.item_id!r} absent from train")
    ts = target.timestamp
    user_hist = [it for it in split.by_user.get(target.user_id, ()) if it.timestamp < ts]
    item_hist = [
        it for it in split.by_item.get(target.item_id, ())
        if it.timestamp < ts and it.user_id != target.user_id
    ]
    return HistoryPair(
        user_history=tuple(_recent_first(user_hist)[:L_u]),
        item_history=tuple(_recent_first(item_hist)[:L_i]),
        target=target,
    )


# ------------------------------------------------------------- persistence


def _interaction_to_json(it: Interaction) -> dict:
    return {
        "user": it.user_id,
        "item": it.item_id,
        "rating": it.rating,
        "ts": it.timestamp,
        "text": it.text,
        "summary": it.summary,
    }


def save(d: Dataset, path) -> None:
    header = {
        "schema": SCHEMA_NAME,
        "version": SCHEMA_VERSION,
        "name": d.name,
        "scale": list(d.scale),
        "count": len(d),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
        for it in d.interactions:
            fh.write(json.dumps(_interaction_to_json(it), sort_keys=True, ensure_ascii=False) + "\n")


def load(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise CorpusFormatError(f"{path}: missing header")
        header = json.loads(first)
        if header.get("schema") != SCHEMA_NAME:
            raise CorpusFormatError(f"{path}: not a canonical corpus file")
        if header.get("version") != SCHEMA_VERSION:
            raise CorpusFormatError(
                f"{path}: schema version {header.get('version')} unsupported (expected {SCHEMA_VERSION})"
            )
        records = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            records.append(Interaction(
                user_id=rec["user"], item_id=rec["item"], rating=int(rec["rating"]),
                timestamp=int(rec["ts"]), text=rec.get("text", ""), summary=rec.get("summary"),
            ))
    return Dataset(tuple(records), tuple(header["scale"]), header.get("name", "dataset"))


def save_split(split: SplitDataset, directory) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    written = []
    for part in ("train", "valid", "test"):
        p = os.path.join(directory, f"{part}.jsonl")
        save(getattr(split, part), p)
        written.append(p)
    p = os.path.join(directory, "split.json")
    with open(p, "w", encoding="utf-8") as fh:
        json.dump({"schema": SCHEMA_NAME, "version": SCHEMA_VERSION, "split_policy": split.split_policy},
                  fh, sort_keys=True, indent=2)
    written.append(p)
    return written


def load_split(directory) -> SplitDataset:
    meta_path = os.path.join(directory, "split.json")
    policy = {}
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("version") != SCHEMA_VERSION:
            raise CorpusFormatError(f"{meta_path}: schema version {meta.get('version')} unsupported")
        policy = meta.get("split_policy", {})
    parts = {p: load(os.path.join(directory, f"{p}.jsonl")) for p in ("train", "valid", "test")}
    return SplitDataset(parts["train"], parts["valid"], parts["test"], policy)
