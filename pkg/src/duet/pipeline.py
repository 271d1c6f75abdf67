"""Action space of the profile generator and the policies that sample it.

An action is a :class:`ProfileBundle`: a cue, a profile prompt and a profile
for each side of a user-item pair, emitted as one tagged text block. The
desk-scale policy is a softmax over a small vocabulary of profile-prompt
strategies; a remote LLM policy produces the same tagged text freely.
"""

from __future__ import annotations

import json
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import HistoryPair, Interaction
from .text import content_tokens

USER, ITEM = "user", "item"
SIDES = (USER, ITEM)

TAGS = ("USER_CUE", "USER_PROMPT", "USER_PROFILE", "ITEM_CUE", "ITEM_PROMPT", "ITEM_PROFILE")
_TAG_ALT = "|".join(TAGS)
# a known tag preceded by any run of backslashes (escape and unescape both
# operate on the run length, which keeps the scheme reversible)
_ESCAPE_RE = re.compile(r"(\\*)(\[(?:%s)\])" % _TAG_ALT)
_UNESCAPE_RE = re.compile(r"\\(\\*)(\[(?:%s)\])" % _TAG_ALT)
_TAG_LINE_RE = re.compile(r"^[ \t]*\[(%s)\]" % _TAG_ALT, re.MULTILINE)

DEFAULT_MAX_CUE_CHARS = 200
DEFAULT_MAX_PROFILE_WORDS = 120


class GrammarError(ValueError):
    """Single-pass output could not be parsed; ``tag`` names the culprit."""

    def __init__(self, tag: str, reason: str):
        super().__init__(f"[{tag}] {reason}")
        self.tag = tag
        self.reason = reason


class EmptyHistoryError(ValueError):
    pass


class PolicyContractError(TypeError):
    """A trace was handed to a policy family that did not produce it."""


class GenerationError(RuntimeError):
    """Remote generation failed; retryable."""


def _contains_tag(text: str) -> bool:
    return any(f"[{t}]" in text for t in TAGS)


def _check_side(side: str):
    if side not in SIDES:
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")


@dataclass(frozen=True)
class Cue:
    text: str
    side: str

    def __post_init__(self):
        _check_side(self.side)
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise ValueError("empty cue")


@dataclass(frozen=True)
class ProfilePrompt:
    text: str
    side: str
    strategy_id: int | None = None

    def __post_init__(self):
        _check_side(self.side)
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise ValueError("empty profile prompt")
        if _contains_tag(self.text):
            raise ValueError("profile prompt contains a section tag")


@dataclass(frozen=True)
class Profile:
    text: str
    side: str

    def __post_init__(self):
        _check_side(self.side)
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise ValueError("empty profile")


@dataclass(frozen=True)
class ProfileBundle:
    user_cue: Cue
    user_prompt: ProfilePrompt
    user_profile: Profile
    item_cue: Cue
    item_prompt: ProfilePrompt
    item_profile: Profile

    def __post_init__(self):
        for name in ("user_cue", "user_prompt", "user_profile"):
            if getattr(self, name).side != USER:
                raise ValueError(f"{name} must have side='user'")
        for name in ("item_cue", "item_prompt", "item_profile"):
            if getattr(self, name).side != ITEM:
                raise ValueError(f"{name} must have side='item'")

    def bodies(self) -> dict[str, str]:
        return {
            "USER_CUE": self.user_cue.text,
            "USER_PROMPT": self.user_prompt.text,
            "USER_PROFILE": self.user_profile.text,
            "ITEM_CUE": self.item_cue.text,
            "ITEM_PROMPT": self.item_prompt.text,
            "ITEM_PROFILE": self.item_profile.text,
        }


# ------------------------------------------------------------------ grammar


def escape_body(text: str) -> str:
    return _ESCAPE_RE.sub(lambda m: "\\" + m.group(1) + m.group(2), text)


def unescape_body(text: str) -> str:
    return _UNESCAPE_RE.sub(lambda m: m.group(1) + m.group(2), text)


def render_single_pass_output(b: ProfileBundle) -> str:
    lines = []
    for tag, body in b.bodies().items():
        lines.append(f"[{tag}]")
        lines.append(escape_body(body))
    return "\n".join(lines)


def parse_single_pass_output(raw: str, strategy_ids: tuple[int | None, int | None] = (None, None)) -> ProfileBundle:
    """Parse the six tagged sections of a single-pass generation.

    A tag counts only at the start of a line and when not escaped. Text
    before the first tag is ignored; section order does not matter. Text
    after the last tag belongs to that section.
    """
    matches = list(_TAG_LINE_RE.finditer(raw))
    sections: dict[str, str] = {}
    for idx, m in enumerate(matches):
        tag = m.group(1)
        if tag in sections:
            raise GrammarError(tag, "duplicated section")
        end = matches[idx + 1].start() if idx + 1 < len(matches) else len(raw)
        sections[tag] = unescape_body(raw[m.end():end]).strip()
    for tag in TAGS:
        if tag not in sections:
            raise GrammarError(tag, "missing section")
        if not sections[tag]:
            raise GrammarError(tag, "empty section")
    builders = {
        "USER_CUE": lambda t: Cue(t, USER),
        "USER_PROMPT": lambda t: ProfilePrompt(t, USER, strategy_ids[0]),
        "USER_PROFILE": lambda t: Profile(t, USER),
        "ITEM_CUE": lambda t: Cue(t, ITEM),
        "ITEM_PROMPT": lambda t: ProfilePrompt(t, ITEM, strategy_ids[1]),
        "ITEM_PROFILE": lambda t: Profile(t, ITEM),
    }
    parts = []
    for tag in TAGS:
        try:
            parts.append(builders[tag](sections[tag]))
        except ValueError as exc:
            raise GrammarError(tag, str(exc)) from exc
    return ProfileBundle(*parts)


# --------------------------------------------------------------- cue + exec


def _history(state: HistoryPair, side: str) -> tuple[Interaction, ...]:
    _check_side(side)
    return state.user_history if side == USER else state.item_history


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def top_tokens(texts: Iterable[str], n: int) -> list[str]:
    counts = Counter(tok for t in texts for tok in content_tokens(t))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in ranked[:n]]


def _clip_chars(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    cut = text[:limit]
    if ", " in cut:
        cut = cut[:cut.rindex(", ")]
    return cut


def synth_cue(state: HistoryPair, side: str, n: int = 3, max_chars: int = DEFAULT_MAX_CUE_CHARS) -> Cue:
    """Deterministic cue: top-``n`` content tokens plus the rounded mean rating.

    Token ties are broken lexicographically.
    """
    hist = _history(state, side)
    if not hist:
        raise EmptyHistoryError(f"empty {side} history for {state.state_id}")
    tokens = top_tokens((it.text for it in hist), n)
    mean = _round_half_up(sum(it.rating for it in hist) / len(hist))
    parts = tokens + [f"avg rating {mean}"]
    return Cue(_clip_chars(", ".join(parts), max_chars), side)


def _clip_words(text: str, limit: int) -> str:
    words = text.split()
    return text if len(words) <= limit else " ".join(words[:limit])


_NO_HISTORY = {USER: "New user without prior reviews.", ITEM: "New item without prior reviews."}


def execute_strategy(focus: str, state: HistoryPair, side: str, n_keywords: int = 5,
                     max_words: int = DEFAULT_MAX_PROFILE_WORDS) -> Profile:
    """Deterministic stand-in for profile generation under one strategy.

    Only the ``genre`` focus copies salient history tokens into the profile;
    every other focus describes rating statistics, tone or activity.
    """
    hist = _history(state, side)
    if not hist:
        return Profile(_NO_HISTORY[side], side)
    ratings = [it.rating for it in hist]
    mean = sum(ratings) / len(ratings)
    who = "Listener" if side == USER else "Release"
    if focus == "genre":
        kws = top_tokens((it.text for it in hist), n_keywords)
        if side == USER:
            body = f"{who} who keeps returning to {', '.join(kws)}." if kws else f"{who} with unclear tastes."
        else:
            body = f"{who} known for {', '.join(kws)}." if kws else f"{who} with an unclear character."
    elif focus == "sentiment":
        pos = sum(r > mean or r >= 4 for r in ratings) / len(ratings)
        tone = "mostly positive" if pos >= 0.6 else "mixed" if pos >= 0.3 else "mostly critical"
        body = f"{who} whose reviews read as {tone} in tone."
    elif focus == "rating":
        body = (f"{who} with average rating {mean:.1f} over {len(ratings)} reviews, "
                f"ranging from {min(ratings)} to {max(ratings)}.")
    elif focus == "complexity":
        words = sum(len(it.text.split()) for it in hist) / len(hist)
        body = f"{who} whose reviews average {words:.0f} words each."
    elif focus == "recency":
        gap_days = (state.target.timestamp - max(it.timestamp for it in hist)) / 86400.0
        body = f"{who} last reviewed {gap_days:.1f} days before this interaction."
    else:
        noun = "reviewed items" if side == USER else "reviews"
        body = f"{who} with {len(hist)} {noun}."
    return Profile(_clip_words(body, max_words), side)


# --------------------------------------------------------------- vocabulary


@dataclass(frozen=True)
class Strategy:
    strategy_id: int
    user_template: str
    item_template: str
    focus: str = "neutral"
    name: str = ""


@dataclass(frozen=True)
class StrategyVocabulary:
    entries: tuple[Strategy, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) < 2:
            raise ValueError("a strategy vocabulary needs at least two entries")
        ids = [s.strategy_id for s in self.entries]
        if ids != list(range(len(ids))):
            raise ValueError(f"strategy ids must be dense 0..K-1 in order, got {ids}")
        for s in self.entries:
            if _contains_tag(s.user_template) or _contains_tag(s.item_template):
                raise ValueError(f"strategy {s.strategy_id} template contains a section tag")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> Strategy:
        return self.entries[i]

    def index_of(self, focus: str) -> int:
        for s in self.entries:
            if s.focus == focus:
                return s.strategy_id
        raise KeyError(focus)

    def to_json(self) -> list[dict]:
        return [
            {"id": s.strategy_id, "name": s.name, "focus": s.focus,
             "user_template": s.user_template, "item_template": s.item_template}
            for s in self.entries
        ]


_DEFAULT_STRATEGIES = [
    ("neutral-summary", "neutral",
     "Summarize this user briefly given {cue}.",
     "Summarize this item briefly given {cue}."),
    ("sentiment-focused", "sentiment",
     "Describe the emotional tone of the user's reviews, starting from {cue}.",
     "Describe how reviewers feel about this item, starting from {cue}."),
    ("rating-behavior-focused", "rating",
     "Characterize how generously the user rates, given {cue}.",
     "Characterize the rating distribution this item receives, given {cue}."),
    ("complexity-focused", "complexity",
     "Describe how detailed the user's reviews are, given {cue}.",
     "Describe how detailed the reviews of this item are, given {cue}."),
    ("recency-focused", "recency",
     "Describe how recently and how often the user is active, given {cue}.",
     "Describe how recently this item has been reviewed, given {cue}."),
    ("genre-focused", "genre",
     "Name the genres and styles the user keeps returning to, grounded in {cue}.",
     "Name the genres and styles that define this item, grounded in {cue}."),
]


def default_vocabulary() -> StrategyVocabulary:
    return StrategyVocabulary(tuple(
        Strategy(i, u, it, focus, name) for i, (name, focus, u, it) in enumerate(_DEFAULT_STRATEGIES)
    ))


def load_vocabulary(path) -> StrategyVocabulary:
    """Read a vocabulary file (YAML or JSON list of mappings with ``id``,
    ``user_template``, ``item_template`` and optional ``focus``/``name``)."""
    import yaml

    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if isinstance(doc, dict):
        doc = doc.get("strategies", [])
    entries = sorted(doc, key=lambda e: int(e["id"]))
    return StrategyVocabulary(tuple(
        Strategy(int(e["id"]), str(e["user_template"]), str(e["item_template"]),
                 str(e.get("focus", "neutral")), str(e.get("name", "")))
        for e in entries
    ))


# ------------------------------------------------------------------ policies


@dataclass(frozen=True)
class PolicyParams:
    logits: tuple[float, ...]
    version: int = 0

    def __post_init__(self):
        logits = tuple(float(x) for x in self.logits)
        if not all(math.isfinite(x) for x in logits):
            raise ValueError(f"non-finite logits {logits}")
        object.__setattr__(self, "logits", logits)

    @classmethod
    def uniform(cls, k: int) -> "PolicyParams":
        return cls(tuple([0.0] * k), 0)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.logits, dtype=np.float64)

    def updated(self, logits: Sequence[float]) -> "PolicyParams":
        return PolicyParams(tuple(float(x) for x in logits), self.version + 1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


@dataclass(frozen=True)
class ActionTrace:
    family: str
    state_id: str
    seed: int
    params_version: int
    strategy_id: int | None = None
    logprob: float | None = None
    raw: str | None = None


class SoftmaxStrategyPolicy:
    """Context-free softmax over a :class:`StrategyVocabulary`.

    Sampling reads an immutable :class:`PolicyParams` snapshot; ``install``
    swaps in a new snapshot under a lock (single writer).
    """

    family = "softmax"

    def __init__(self, vocabulary: StrategyVocabulary | None = None, params: PolicyParams | None = None,
                 n_cue_tokens: int = 3, n_keywords: int = 5, max_profile_words: int = DEFAULT_MAX_PROFILE_WORDS):
        self.vocabulary = vocabulary or default_vocabulary()
        self._params = params or PolicyParams.uniform(len(self.vocabulary))
        if len(self._params.logits) != len(self.vocabulary):
            raise ValueError("logit count does not match vocabulary size")
        self.n_cue_tokens = n_cue_tokens
        self.n_keywords = n_keywords
        self.max_profile_words = max_profile_words
        self._lock = threading.Lock()

    @property
    def params(self) -> PolicyParams:
        return self._params

    def install(self, params: PolicyParams) -> None:
        if len(params.logits) != len(self.vocabulary):
            raise ValueError("logit count does not match vocabulary size")
        with self._lock:
            if params.version <= self._params.version and params != self._params:
                raise ValueError("params version must increase")
            self._params = params

    def probabilities(self, params: PolicyParams | None = None) -> np.ndarray:
        return softmax((params or self._params).as_array())

    def entropy(self) -> float:
        lp = log_softmax(self._params.as_array())
        return float(-(np.exp(lp) * lp).sum())

    def _cue(self, state: HistoryPair, side: str) -> Cue:
        try:
            return synth_cue(state, side, self.n_cue_tokens)
        except EmptyHistoryError:
            return Cue("no prior history", side)

    def build_bundle(self, state: HistoryPair, strategy_id: int) -> ProfileBundle:
        from .llmgateway import render_template

        strat = self.vocabulary[strategy_id]
        parts = {}
        for side, template in ((USER, strat.user_template), (ITEM, strat.item_template)):
            cue = self._cue(state, side)
            prompt = ProfilePrompt(render_template(template, {"cue": cue.text}), side, strategy_id)
            profile = execute_strategy(strat.focus, state, side, self.n_keywords, self.max_profile_words)
            parts[side] = (cue, prompt, profile)
        return ProfileBundle(*parts[USER], *parts[ITEM])

    def sample(self, state: HistoryPair, rng_seed: int) -> tuple[ProfileBundle, ActionTrace]:
        params = self._params
        probs = softmax(params.as_array())
        u = np.random.default_rng(rng_seed).random()
        k = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        k = min(k, len(probs) - 1)
        trace = ActionTrace(self.family, state.state_id, int(rng_seed), params.version,
                            strategy_id=k, logprob=float(log_softmax(params.as_array())[k]))
        return self.build_bundle(state, k), trace

    def greedy(self, state: HistoryPair) -> ProfileBundle:
        return self.build_bundle(state, int(np.argmax(self._params.as_array())))

    def logprob(self, trace: ActionTrace, params: PolicyParams | None = None) -> float:
        if trace.family != self.family or trace.strategy_id is None:
            raise PolicyContractError(f"trace family {trace.family!r} is not {self.family!r}")
        return float(log_softmax((params or self._params).as_array())[trace.strategy_id])


class RemotePolicy:
    """Free-text policy backed by a chat-completion endpoint.

    Produces the tagged single-pass layout; no log-probabilities are
    available, so it can be evaluated but not optimized here.
    """

    family = "remote"

    def __init__(self, client, template_id: str = "single_pass", temperature: float = 0.7,
                 max_tokens: int = 768):
        self.client = client
        self.template_id = template_id
        self.temperature = temperature
        self.max_tokens = max_tokens

    def _variables(self, state: HistoryPair) -> dict[str, str]:
        def fmt(hist):
            return "\n".join(f"- ({it.rating}/5) {it.text}" for it in hist) or "(none)"

        ratings = [it.rating for it in state.user_history] or [0]
        item_ratings = [it.rating for it in state.item_history] or [0]
        return {
            "user_history": fmt(state.user_history),
            "item_history": fmt(state.item_history),
            "avg_ratings": f"user {sum(ratings) / len(ratings):.2f}, item {sum(item_ratings) / len(item_ratings):.2f}",
        }

    def _generate(self, state: HistoryPair, temperature: float, seed: int | None) -> str:
        from .llmgateway import GenRequest, TransportError

        req = GenRequest(self.template_id, self._variables(state), temperature, self.max_tokens, seed)
        try:
            return self.client.generate(req)
        except TransportError as exc:
            raise GenerationError(str(exc)) from exc

    def sample(self, state: HistoryPair, rng_seed: int) -> tuple[ProfileBundle | None, ActionTrace]:
        raw = self._generate(state, self.temperature, rng_seed)
        trace = ActionTrace(self.family, state.state_id, int(rng_seed), 0, raw=raw)
        try:
            return parse_single_pass_output(raw), trace
        except GrammarError:
            return None, trace

    def greedy(self, state: HistoryPair) -> ProfileBundle:
        return parse_single_pass_output(self._generate(state, 0.0, 0))

    def logprob(self, trace: ActionTrace, params=None) -> float:
        raise PolicyContractError("remote policies expose no log-probabilities")


def policy_sample(policy, state: HistoryPair, rng_seed: int):
    return policy.sample(state, rng_seed)


def policy_logprob(policy, trace: ActionTrace, params: PolicyParams | None = None) -> float:
    return policy.logprob(trace, params)


@dataclass
class SampleArchive:
    """Append-only JSON-lines audit log of raw single-pass generations."""

    path: str
    _fh: object = field(default=None, repr=False)

    def __enter__(self):
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        return self

    def __exit__(self, *exc):
        self._fh.close()

    def write(self, state: HistoryPair, seed: int, raw: str, parse_ok: bool, **extra) -> None:
        rec = {"state": state.state_id, "user": state.target.user_id, "item": state.target.item_id,
               "seed": seed, "raw": raw, "parse_ok": parse_ok, **extra}
        self._fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
