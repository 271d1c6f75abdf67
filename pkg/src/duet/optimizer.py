"""Fractional reward and group-relative policy optimization.

For every sampled state the policy draws ``G`` actions, the frozen
environment scores each profile pair, rewards are normalised within the
group, and the clipped surrogate is ascended on the softmax logits.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import HistoryPair, SplitDataset, build_history_pair
from .pipeline import (ActionTrace, PolicyContractError, PolicyParams, ProfileBundle, SampleArchive,
                       SoftmaxStrategyPolicy, log_softmax, render_single_pass_output, softmax)
from .recommender import BackendError, Prediction

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NumericalError(ArithmeticError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def fractional_reward(y: float, y_hat: float, M: float) -> float:
    """``clamp(1 - |y - y_hat| / M, 0, 1)``."""
    if not M > 0:
        raise ValueError(f"maximum rating gap must be positive, got {M}")
    r = 1.0 - abs(y - y_hat) / M
    return 0.0 if r < 0.0 else 1.0 if r > 1.0 else r


def group_advantages(rewards: Sequence[float], eps_std: float = 1e-8, normalize: str = "std") -> np.ndarray:
    """Group-relative advantages.

    ``normalize="std"`` divides by the population std plus ``eps_std``;
    ``"mean"`` only subtracts the group mean.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least two rewards")
    centered = r - r.mean()
    if np.all(r == r[0]):
        return np.zeros_like(r)
    if normalize == "mean":
        return centered
    if normalize != "std":
        raise ValueError(f"unknown normalization {normalize!r}")
    return centered / (r.std() + eps_std)


@dataclass
class RewardSample:
    y: float
    y_hat: float | None
    M: float
    reward: float
    bundle: ProfileBundle | None
    trace: ActionTrace


@dataclass
class GroupBatch:
    state: HistoryPair
    samples: list[RewardSample]
    advantages: np.ndarray

    def __post_init__(self):
        if len(self.samples) < 2:
            raise ValueError("group size must be >= 2")
        if len(self.advantages) != len(self.samples):
            raise ValueError("one advantage per sample")


@dataclass
class TrainConfig:
    group_size: int = 8
    learning_rate: float = 0.5
    clip_epsilon: float = 0.2
    kl_coefficient: float = 0.0
    iterations: int = 200
    epochs_per_batch: int = 1
    eps_std: float = 1e-8
    seed: int = 0
    advantage_mode: str = "std"
    env_retries: int = 2
    workers: int = 1

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.learning_rate <= 0 or self.eps_std <= 0:
            raise ValueError("learning_rate and eps_std must be positive")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.kl_coefficient < 0 or self.iterations < 0 or self.epochs_per_batch < 1:
            raise ValueError("invalid kl_coefficient / iterations / epochs_per_batch")
        if self.advantage_mode not in ("std", "mean"):
            raise ValueError("advantage_mode must be 'std' or 'mean'")


# ---------------------------------------------------------------- surrogate


def surrogate_objective(logits, old_logits, actions, advantages, clip_epsilon, kl_coefficient=0.0) -> float:
    """Clipped surrogate minus ``beta * KL(pi_new || pi_old)`` for a softmax policy."""
    lp = log_softmax(np.asarray(logits, dtype=np.float64))
    lpo = log_softmax(np.asarray(old_logits, dtype=np.float64))
    a = np.asarray(actions, dtype=int)
    adv = np.asarray(advantages, dtype=np.float64)
    ratio = np.exp(lp[a] - lpo[a])
    clipped = np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon)
    j = np.minimum(ratio * adv, clipped * adv).mean()
    if kl_coefficient:
        j -= kl_coefficient * float((np.exp(lp) * (lp - lpo)).sum())
    return float(j)


def surrogate_gradient(logits, old_logits, actions, advantages, clip_epsilon, kl_coefficient=0.0) -> np.ndarray:
    """Analytic gradient of :func:`surrogate_objective` w.r.t. ``logits``.

    A sample contributes only while its unclipped term is the active branch
    of the ``min``; d ratio / d logits = ratio * (onehot(a) - pi).
    """
    logits = np.asarray(logits, dtype=np.float64)
    lp = log_softmax(logits)
    lpo = log_softmax(np.asarray(old_logits, dtype=np.float64))
    pi = np.exp(lp)
    a = np.asarray(actions, dtype=int)
    adv = np.asarray(advantages, dtype=np.float64)
    ratio = np.exp(lp[a] - lpo[a])
    clipped = np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon)
    # negated strict test so a NaN advantage stays active and surfaces
    active = ~(ratio * adv > clipped * adv)
    grad = np.zeros_like(logits)
    for ai, ri, advi, act in zip(a, ratio, adv, active):
        if act:
            g = -ri * advi * pi
            g[ai] += ri * advi
            grad += g
    grad /= len(a)
    if kl_coefficient:
        kl = float((pi * (lp - lpo)).sum())
        grad -= kl_coefficient * pi * (lp - lpo - kl)
    return grad


def reinforce_gradient(logits, actions, advantages) -> np.ndarray:
    """``mean_i A_i * grad log pi(a_i)``, the group-baseline REINFORCE direction."""
    pi = softmax(np.asarray(logits, dtype=np.float64))
    grad = np.zeros_like(pi)
    for ai, advi in zip(actions, advantages):
        g = -advi * pi
        g[ai] += advi
        grad += g
    return grad / len(actions)


def grpo_update(policy: SoftmaxStrategyPolicy, batch: GroupBatch, old_params: PolicyParams,
                cfg: TrainConfig) -> PolicyParams:
    """Gradient ascent on the clipped surrogate; returns new params (version + 1).

    The caller decides whether to install them on the policy.
    """
    actions = [s.trace.strategy_id for s in batch.samples]
    for s in batch.samples:
        if s.trace.family != policy.family:
            raise PolicyContractError(f"cannot optimize trace family {s.trace.family!r}")
    old = old_params.as_array()
    theta = policy.params.as_array().copy()
    for epoch in range(cfg.epochs_per_batch):
        grad = surrogate_gradient(theta, old, actions, batch.advantages, cfg.clip_epsilon, cfg.kl_coefficient)
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite surrogate gradient", {
                "epoch": epoch, "logits": theta.tolist(), "old_logits": old.tolist(),
                "actions": actions, "advantages": np.asarray(batch.advantages).tolist(),
                "gradient": grad.tolist(),
            })
        theta = theta + cfg.learning_rate * grad
    if not np.all(np.isfinite(theta)):
        raise NumericalError("non-finite logits after update", {"logits": theta.tolist()})
    return PolicyParams(tuple(theta.tolist()), policy.params.version + 1)


# -------------------------------------------------------------------- loop


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: dict):
        self.records.append(rec)

    def mean_rewards(self) -> list[float]:
        return [r["mean_reward"] for r in self.records if not r.get("skipped")]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())


def training_states(split: SplitDataset, L_u: int = 30, L_i: int = 30) -> list[HistoryPair]:
    """Train-split interactions that have both a prior user and item history."""
    states = []
    for it in split.train.interactions:
        hp = build_history_pair(split, it, L_u, L_i)
        if hp.user_history and hp.item_history:
            states.append(hp)
    return states


def _evaluate_sample(env, bundle, trace, y, M, retries):
    if bundle is None:
        return RewardSample(y, None, M, 0.0, None, trace)
    for attempt in range(retries + 1):
        try:
            pred: Prediction = env.predict(bundle.user_profile, bundle.item_profile)
            break
        except BackendError as exc:
            logger.warning("environment failure (attempt %d): %s", attempt + 1, exc)
    else:
        return None
    if not pred.parse_ok:
        return RewardSample(y, None, M, 0.0, bundle, trace)
    return RewardSample(y, pred.score, M, fractional_reward(y, pred.score, M), bundle, trace)


def train_loop(env, corpus, policy: SoftmaxStrategyPolicy, cfg: TrainConfig, history_lengths=(30, 30),
               archive: SampleArchive | None = None) -> tuple[PolicyParams, TrainingLog]:
    """On-policy GRPO against a frozen environment.

    ``corpus`` is a :class:`SplitDataset` (train-split states are derived) or
    a prepared sequence of :class:`HistoryPair`. All randomness comes from
    ``cfg.seed``.
    """
    log = TrainingLog()
    if cfg.iterations == 0:
        return policy.params, log
    states = training_states(corpus, *history_lengths) if isinstance(corpus, SplitDataset) else list(corpus)
    if not states:
        raise ValueError("no training states available")
    lo, hi = env.scale
    M = float(hi - lo)
    rng = np.random.default_rng(cfg.seed)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for it in range(cfg.iterations):
            state = states[int(rng.integers(len(states)))]
            seeds = rng.integers(0, 2**31 - 1, size=cfg.group_size)
            old_params = policy.params
            drawn = [policy.sample(state, int(s)) for s in seeds]
            y = float(state.target.rating)

            def score(pair):
                return _evaluate_sample(env, pair[0], pair[1], y, M, cfg.env_retries)

            results = list(pool.map(score, drawn)) if pool else [score(p) for p in drawn]
            samples = [r for r in results if r is not None]
            if archive is not None:
                for (bundle, trace) in drawn:
                    raw = trace.raw if trace.raw is not None else render_single_pass_output(bundle)
                    archive.write(state, trace.seed, raw, bundle is not None, iteration=it,
                                  strategy=trace.strategy_id)
            rewards = [s.reward for s in samples]
            rec = {
                "iteration": it,
                "state": state.state_id,
                "n_samples": len(samples),
                "dropped": len(results) - len(samples),
                "params_version": old_params.version,
            }
            if len(samples) < 2:
                rec["skipped"] = True
                logger.warning("iteration %d skipped: fewer than two scored samples", it)
                log.append(rec)
                continue
            adv = group_advantages(rewards, cfg.eps_std, cfg.advantage_mode)
            batch = GroupBatch(state, samples, adv)
            new_params = grpo_update(policy, batch, old_params, cfg)
            policy.install(new_params)
            hist = [0] * len(policy.vocabulary)
            for s in samples:
                hist[s.trace.strategy_id] += 1
            rec.update({
                "mean_reward": float(np.mean(rewards)),
                "min_reward": float(np.min(rewards)),
                "max_reward": float(np.max(rewards)),
                "adv_mean": float(adv.mean()),
                "adv_std": float(adv.std()),
                "entropy": policy.entropy(),
                "strategy_hist": hist,
                "probs": [float(p) for p in policy.probabilities()],
            })
            log.append(rec)
    finally:
        if pool:
            pool.shutdown()
    return policy.params, log


# -------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: PolicyParams, cfg: TrainConfig, vocabulary=None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "params": {"logits": list(params.logits), "version": params.version},
        "train_config": asdict(cfg),
        "seed": cfg.seed,
    }
    if vocabulary is not None:
        doc["vocabulary"] = vocabulary.to_json()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> tuple[PolicyParams, TrainConfig]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    p = doc["params"]
    return PolicyParams(tuple(p["logits"]), int(p["version"])), TrainConfig(**doc["train_config"])
