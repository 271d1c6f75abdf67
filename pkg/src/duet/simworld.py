"""Seeded synthetic review world with latent genres.

Users and items get non-negative unit latent vectors over genres; users
review items in proportion to latent affinity; ratings come from
:func:`duet.recommender.synth_truth`; review texts are fixed templates with
slots for the item's and the user's top-genre keywords.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Dataset, Interaction
from .recommender import SynthWorldSpec, synth_truth

DEFAULT_KEYWORDS = (
    ("funk", "groove", "bass", "soul"),
    ("metal", "riff", "shred", "distortion"),
    ("jazz", "swing", "bebop", "saxophone"),
    ("folk", "acoustic", "ballad", "banjo"),
    ("synth", "techno", "beat", "rave"),
    ("rap", "rhyme", "sample", "boombap"),
)

# filler words are all stopwords, so keyword and sentiment slots carry the content
TEMPLATES = (
    "the {ikw} on this one is {adj}. i am really into {ukw} and {ukw2}.",
    "i am into {ukw} so this {ikw} one was {adj}. more {ukw2} for me.",
    "{adj} {ikw} here. i am all about {ukw} and {ukw2} and this was {adj}.",
)
ADJECTIVES = ("awful", "weak", "decent", "good", "superb")
BASE_TIMESTAMP = 1_600_000_000
STEP_SECONDS = 3600


def _keywords_for(n_genres: int) -> tuple[tuple[str, ...], ...]:
    out = list(DEFAULT_KEYWORDS[:n_genres])
    for g in range(len(out), n_genres):
        out.append(tuple(f"style{g}{c}" for c in "abcd"))
    return tuple(out)


@dataclass(frozen=True)
class SimConfig:
    n_users: int = 50
    n_items: int = 40
    n_genres: int = 4
    reviews_per_user: int = 12
    seed: int = 7
    keywords: tuple | None = None
    scale: tuple = (1, 5)
    # latent components are |N(0,1)| ** sharpness before normalisation;
    # larger values concentrate each entity on one genre
    sharpness: float = 8.0
    name: str = "simworld"

    def __post_init__(self):
        for f in ("n_users", "n_items", "n_genres", "reviews_per_user"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.reviews_per_user > self.n_items:
            raise ValueError("reviews_per_user cannot exceed n_items")
        kws = self.keywords if self.keywords is not None else _keywords_for(self.n_genres)
        kws = tuple(tuple(k) for k in kws)
        if len(kws) != self.n_genres or any(len(k) < 3 for k in kws):
            raise ValueError("need >= 3 keywords for every genre")
        flat = [w for k in kws for w in k]
        if len(set(flat)) != len(flat):
            raise ValueError("keyword lists must be pairwise disjoint")
        object.__setattr__(self, "keywords", kws)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "keywords" in d and d["keywords"] is not None:
            d["keywords"] = tuple(tuple(k) for k in d["keywords"])
        if "scale" in d:
            d["scale"] = tuple(d["scale"])
        return cls(**d)


def _latents(rng, n: int, n_genres: int, sharpness: float) -> np.ndarray:
    z = np.abs(rng.standard_normal((n, n_genres))) ** sharpness
    z += 1e-12
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _adjective(rating: int, scale) -> str:
    lo, hi = scale
    frac = (rating - lo) / (hi - lo)
    return ADJECTIVES[int(round(frac * (len(ADJECTIVES) - 1)))]


def build_world(cfg: SimConfig | None = None) -> tuple[SynthWorldSpec, Dataset]:
    cfg = cfg or SimConfig()
    rng = np.random.default_rng(cfg.seed)
    zu = _latents(rng, cfg.n_users, cfg.n_genres, cfg.sharpness)
    zi = _latents(rng, cfg.n_items, cfg.n_genres, cfg.sharpness)
    users = [f"u{n:04d}" for n in range(cfg.n_users)]
    items = [f"i{n:04d}" for n in range(cfg.n_items)]
    world = SynthWorldSpec(
        n_genres=cfg.n_genres,
        user_latents={u: tuple(v) for u, v in zip(users, zu)},
        item_latents={i: tuple(v) for i, v in zip(items, zi)},
        genre_keywords=cfg.keywords,
        noise_seed=cfg.seed,
        scale=cfg.scale,
    )
    affinity = np.clip(zu @ zi.T, 0.0, 1.0) + 1e-9
    picks = []
    for u in range(cfg.n_users):
        p = affinity[u] / affinity[u].sum()
        picks.append(rng.choice(cfg.n_items, size=cfg.reviews_per_user, replace=False, p=p))
    user_top = zu.argmax(axis=1)
    item_top = zi.argmax(axis=1)
    interactions = []
    step = 0
    # round-robin over users so every user is active across the whole timeline
    for r in range(cfg.reviews_per_user):
        for u in rng.permutation(cfg.n_users):
            i = int(picks[u][r])
            rating = synth_truth(world, users[u], items[i])
            ikw = cfg.keywords[item_top[i]][rng.integers(len(cfg.keywords[item_top[i]]))]
            ukw, ukw2 = rng.choice(cfg.keywords[user_top[u]], size=2, replace=False)
            template = TEMPLATES[rng.integers(len(TEMPLATES))]
            text = template.format(ikw=ikw, ukw=ukw, ukw2=ukw2, adj=_adjective(rating, cfg.scale))
            interactions.append(Interaction(users[u], items[i], rating,
                                            BASE_TIMESTAMP + step * STEP_SECONDS, text))
            step += 1
    return world, Dataset(tuple(interactions), cfg.scale, cfg.name)


def save_world(world: SynthWorldSpec, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(world.to_json(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_world(path) -> SynthWorldSpec:
    with open(path, encoding="utf-8") as fh:
        return SynthWorldSpec.from_json(json.load(fh))
