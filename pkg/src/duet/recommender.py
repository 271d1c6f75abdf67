"""Frozen downstream rating predictors.

The synthetic oracle scores a profile pair by how well their genre-keyword
histograms align; the remote predictor asks a chat model for a number.
Nothing here has mutable state that optimization could touch.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .pipeline import Profile
from .text import tokenize


class BackendError(RuntimeError):
    """The environment could not produce a prediction (distinct from a
    prediction that failed to parse)."""


@dataclass(frozen=True)
class Prediction:
    score: float | None
    parse_ok: bool = True
    raw: str | None = None

    def __post_init__(self):
        if not self.parse_ok and self.score is not None:
            raise ValueError("failed parse must not carry a score")
        if self.parse_ok and self.score is None:
            raise ValueError("parsed prediction needs a score")


def _clamp(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class SynthWorldSpec:
    n_genres: int
    user_latents: dict
    item_latents: dict
    genre_keywords: tuple
    noise_seed: int = 0
    scale: tuple = (1, 5)

    def __post_init__(self):
        object.__setattr__(self, "genre_keywords", tuple(tuple(k) for k in self.genre_keywords))
        object.__setattr__(self, "scale", tuple(int(s) for s in self.scale))
        if len(self.genre_keywords) != self.n_genres:
            raise ValueError("need one keyword list per genre")
        seen = set()
        for kws in self.genre_keywords:
            lowered = {k.lower() for k in kws}
            if lowered & seen:
                raise ValueError(f"keyword lists overlap on {sorted(lowered & seen)}")
            seen |= lowered
        for table in (self.user_latents, self.item_latents):
            for key, vec in table.items():
                v = np.asarray(vec, dtype=np.float64)
                if v.shape != (self.n_genres,) or abs(np.linalg.norm(v) - 1.0) > 1e-9:
                    raise ValueError(f"latent for {key!r} is not a unit vector of length {self.n_genres}")
        lookup = {}
        for g, kws in enumerate(self.genre_keywords):
            for kw in kws:
                lookup[kw.lower()] = g
        object.__setattr__(self, "_keyword_genre", lookup)

    def keyword_genre(self, token: str) -> int | None:
        return self._keyword_genre.get(token)

    def genre_hits(self, text: str) -> np.ndarray:
        counts = np.zeros(self.n_genres)
        for tok in tokenize(text):
            g = self._keyword_genre.get(tok)
            if g is not None:
                counts[g] += 1
        n = np.linalg.norm(counts)
        return counts / n if n > 0 else counts

    def top_genre(self, vec) -> int:
        return int(np.argmax(np.asarray(vec)))

    def to_json(self) -> dict:
        return {
            "n_genres": self.n_genres,
            "user_latents": {k: [float(x) for x in v] for k, v in sorted(self.user_latents.items())},
            "item_latents": {k: [float(x) for x in v] for k, v in sorted(self.item_latents.items())},
            "genre_keywords": [list(k) for k in self.genre_keywords],
            "noise_seed": self.noise_seed,
            "scale": list(self.scale),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SynthWorldSpec":
        return cls(
            n_genres=int(d["n_genres"]),
            user_latents={k: tuple(v) for k, v in d["user_latents"].items()},
            item_latents={k: tuple(v) for k, v in d["item_latents"].items()},
            genre_keywords=tuple(tuple(k) for k in d["genre_keywords"]),
            noise_seed=int(d.get("noise_seed", 0)),
            scale=tuple(d.get("scale", (1, 5))),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def synth_predict(world: SynthWorldSpec, p_u: Profile | str, p_i: Profile | str) -> Prediction:
    """``r_min + (r_max - r_min) * clamp(<g(p_u), g(p_i)>, 0, 1)`` where ``g``
    is the L2-normalised per-genre keyword count vector."""
    tu = p_u.text if isinstance(p_u, Profile) else p_u
    ti = p_i.text if isinstance(p_i, Profile) else p_i
    if not tu.strip() or not ti.strip():
        raise ValueError("profiles must be non-empty")
    lo, hi = world.scale
    s = float(world.genre_hits(tu) @ world.genre_hits(ti))
    return Prediction(lo + (hi - lo) * _clamp(s, 0.0, 1.0), True)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def synth_truth(world: SynthWorldSpec, user_id: str, item_id: str) -> int:
    try:
        zu = np.asarray(world.user_latents[user_id])
        zi = np.asarray(world.item_latents[item_id])
    except KeyError as exc:
        raise LookupError(f"unknown entity {exc.args[0]!r}") from None
    lo, hi = world.scale
    return round_half_up(lo + (hi - lo) * _clamp(float(zu @ zi), 0.0, 1.0))


_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?")


def parse_rating(text: str, scale) -> Prediction:
    m = _NUMBER_RE.search(text)
    if m is None:
        return Prediction(None, False, text)
    lo, hi = scale
    return Prediction(float(_clamp(float(m.group(0)), lo, hi)), True, text)


def remote_predict(client, p_u: Profile | str, p_i: Profile | str, scale=(1, 5)) -> Prediction:
    """Ask the chat endpoint for a rating at temperature 0 and read the first number."""
    from .llmgateway import GenRequest, ProtocolError, TransportError

    tu = p_u.text if isinstance(p_u, Profile) else p_u
    ti = p_i.text if isinstance(p_i, Profile) else p_i
    req = GenRequest("predict", {"user_profile": tu, "item_profile": ti,
                                 "r_min": scale[0], "r_max": scale[1]}, 0.0, 16)
    try:
        text = client.generate(req)
    except (TransportError, ProtocolError) as exc:
        raise BackendError(str(exc)) from exc
    return parse_rating(text, scale)


class SyntheticEnvironment:
    def __init__(self, world: SynthWorldSpec):
        self.world = world
        self.scale = world.scale

    def predict(self, p_u, p_i) -> Prediction:
        return synth_predict(self.world, p_u, p_i)

    def fingerprint(self) -> str:
        return self.world.fingerprint()


class RemoteEnvironment:
    def __init__(self, client, scale=(1, 5)):
        self.client = client
        self.scale = tuple(scale)

    def predict(self, p_u, p_i) -> Prediction:
        return remote_predict(self.client, p_u, p_i, self.scale)

    def fingerprint(self) -> str:
        ep = self.client.endpoint
        blob = json.dumps({"url": ep.base_url, "model": ep.model, "scale": list(self.scale)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()
