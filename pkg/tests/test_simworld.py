import numpy as np
import pytest

from duet.corpus import k_core_filter, timestamp_split
from duet.optimizer import fractional_reward, training_states
from duet.pipeline import SoftmaxStrategyPolicy
from duet.recommender import synth_predict
from duet.simworld import SimConfig, build_world, load_world, save_world
from duet.text import tokenize


def test_determinism():
    assert build_world(SimConfig(seed=3)) == build_world(SimConfig(seed=3))
    assert build_world(SimConfig(seed=3))[1] != build_world(SimConfig(seed=4))[1]


def test_single_genre_rates_everything_max():
    _, d = build_world(SimConfig(n_genres=1, n_users=10, n_items=8, reviews_per_user=4))
    assert {it.rating for it in d} == {5}


def test_item_reviews_carry_item_genre_keyword():
    world, d = build_world(SimConfig())
    for it in d:
        g = int(np.argmax(world.item_latents[it.item_id]))
        assert set(tokenize(it.text)) & set(world.genre_keywords[g])


def test_timestamps_strictly_increase_and_ratings_in_scale():
    _, d = build_world(SimConfig())
    ts = [it.timestamp for it in d]
    assert all(a < b for a, b in zip(ts, ts[1:]))
    assert all(1 <= it.rating <= 5 for it in d)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_items=5, reviews_per_user=6)
    with pytest.raises(ValueError):
        SimConfig(n_genres=2, keywords=(("a", "b", "c"), ("c", "d", "e")))
    with pytest.raises(ValueError):
        SimConfig(n_users=0)
    assert len(SimConfig(n_genres=8).keywords) == 8


def test_survives_two_core():
    _, d = build_world(SimConfig())
    assert len(k_core_filter(d, 2)) > 0.5 * len(d)


def test_genre_strategy_dominates_neutral():
    world, d = build_world(SimConfig(n_users=20, n_items=16, reviews_per_user=6, seed=2))
    split = timestamp_split(k_core_filter(d, 2), 0.1, 0.1)
    pol = SoftmaxStrategyPolicy()
    expected = {}
    for focus in ("genre", "neutral"):
        k = pol.vocabulary.index_of(focus)
        rewards = []
        for s in training_states(split):
            b = pol.build_bundle(s, k)
            rewards.append(fractional_reward(s.target.rating, synth_predict(world, b.user_profile,
                                                                            b.item_profile).score, 4))
        expected[focus] = np.mean(rewards)
    assert expected["genre"] > expected["neutral"]


def test_world_json_round_trip(tmp_path):
    world, _ = build_world(SimConfig(n_users=5, n_items=5, reviews_per_user=2))
    save_world(world, tmp_path / "w.json")
    back = load_world(tmp_path / "w.json")
    assert back.fingerprint() == world.fingerprint()
