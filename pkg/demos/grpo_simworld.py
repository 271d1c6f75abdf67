"""Train the strategy policy with group-relative updates against the synthetic judge."""

import numpy as np

from duet.corpus import k_core_filter, timestamp_split
from duet.evaluation import EvalOptions, evaluate, policy_profiler
from duet.optimizer import TrainConfig, train_loop
from duet.pipeline import SoftmaxStrategyPolicy
from duet.recommender import SyntheticEnvironment
from duet.simworld import SimConfig, build_world

world, raw = build_world(SimConfig(seed=7))
split = timestamp_split(k_core_filter(raw, 5), 0.1, 0.1)
env = SyntheticEnvironment(world)
opts = EvalOptions(negatives="none", k_list=(1,))

policy = SoftmaxStrategyPolicy()
before = evaluate(split, policy_profiler(policy), env, opts).accuracy

cfg = TrainConfig(group_size=8, learning_rate=0.5, iterations=200, seed=7)
params, log = train_loop(env, split, policy, cfg)
rewards = log.mean_rewards()
for it in (0, 10, 50, 100, 199):
    print(f"iteration {it:>3}: mean reward {rewards[it]:.3f}")

print("\nfinal strategy distribution:")
for strat, p in zip(policy.vocabulary, policy.probabilities()):
    print(f"  {strat.focus:<12}{p:.3f}")

after = evaluate(split, policy_profiler(policy), env, opts).accuracy
print(f"\ntest accuracy {before:.3f} -> {after:.3f}; "
      f"reward gain {np.mean(rewards[-10:]) - np.mean(rewards[:10]):+.3f}")
