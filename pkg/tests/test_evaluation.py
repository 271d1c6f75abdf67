import pytest

from duet.corpus import k_core_filter, timestamp_split
from duet.evaluation import (EnvironmentExhausted, EvalOptions, evaluate, policy_profiler, raw_history_profiler,
                             textrank_profiler)
from duet.pipeline import PolicyParams, SoftmaxStrategyPolicy
from duet.recommender import BackendError, SyntheticEnvironment
from duet.simworld import SimConfig, build_world


@pytest.fixture(scope="module")
def world_split():
    world, d = build_world(SimConfig())
    return world, timestamp_split(k_core_filter(d, 5), 0.1, 0.1)


def one_hot_policy(vocab_focus):
    pol = SoftmaxStrategyPolicy()
    k = pol.vocabulary.index_of(vocab_focus)
    return SoftmaxStrategyPolicy(pol.vocabulary, PolicyParams(tuple(5.0 if j == k else 0.0 for j in range(6)), 1))


def test_genre_checkpoint_beats_neutral(world_split):
    world, split = world_split
    env = SyntheticEnvironment(world)
    opts = EvalOptions(negatives="none", k_list=(1,))
    genre = evaluate(split, policy_profiler(one_hot_policy("genre")), env, opts)
    neutral = evaluate(split, policy_profiler(one_hot_policy("neutral")), env, opts)
    assert genre.accuracy > neutral.accuracy


def test_single_candidate_ndcg_is_one(world_split):
    world, split = world_split
    r = evaluate(split, policy_profiler(SoftmaxStrategyPolicy()), SyntheticEnvironment(world),
                 EvalOptions(n_negatives=0, k_list=(1,)))
    assert r.ndcg == {1: 1.0}


def test_textrank_user_coverage_is_one(world_split):
    world, split = world_split
    r = evaluate(split, textrank_profiler(), SyntheticEnvironment(world), EvalOptions(max_instances=20))
    assert r.user_coverage == 1.0


def test_raw_history_report_well_formed(world_split):
    world, split = world_split
    r = evaluate(split, raw_history_profiler(), SyntheticEnvironment(world), EvalOptions())
    assert r.parse_failures == 0 and r.n == len(split.test)
    assert 0 <= r.accuracy <= 1 and all(0 <= v <= 1 for v in r.ndcg.values())
    assert set(r.per_group) <= {"stable", "moderate", "diverse"}
    assert sum(g["n"] for g in r.per_group.values()) <= r.n


def test_rerun_same_seed_identical(world_split):
    world, split = world_split
    run = lambda: evaluate(split, raw_history_profiler(), SyntheticEnvironment(world),
                           EvalOptions(seed=5, max_instances=15)).to_json()
    assert run() == run()


def test_ease_negatives_mode(world_split):
    world, split = world_split
    r = evaluate(split, textrank_profiler(), SyntheticEnvironment(world),
                 EvalOptions(negatives="ease", max_instances=10))
    assert r.meta["negatives"] == "ease" and set(r.ndcg) == {1, 5, 10}


def test_options_validation():
    with pytest.raises(ValueError):
        EvalOptions(k_list=(11,))
    with pytest.raises(ValueError):
        EvalOptions(negatives="popular")


class DeadEnv:
    scale = (1, 5)

    def predict(self, pu, pi):
        raise BackendError("down")


def test_environment_exhaustion(world_split):
    _, split = world_split
    with pytest.raises(EnvironmentExhausted):
        evaluate(split, raw_history_profiler(), DeadEnv(), EvalOptions(env_retries=1))
