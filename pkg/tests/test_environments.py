import itertools
import math
from collections import Counter

import numpy as np
import pytest

from src.distribution import DiscreteDistribution
from src.environments import (
    Environment,
    FeatureMap,
    Policy,
    RewardFunction,
    TabularMDP,
    enumerate_observations,
    enumerate_policies,
    observation_likelihood,
    observation_return,
    observation_steps,
    q_policy,
    q_star,
    sample_observation,
    value,
)
from src.errors import CapExceeded, FeatureMapMismatch, InvalidDistribution, UnknownObservation
from src.presets import HYBRID_FEATURES, make_bernoulli_bandit, make_toy_bandit, toy_gap


def test_toy_values(toy_env):
    gap = toy_gap(1024)
    eps = 0.5 * gap
    m1, m2 = toy_env.model("M1"), toy_env.model("M2")
    a1, a2, a3 = toy_env.policies
    assert value(m1, a1) == pytest.approx(0.5 - gap)
    assert value(m1, a2) == pytest.approx(0.5 + gap)
    assert value(m1, a3) == pytest.approx(eps / 2)
    assert value(m2, a1) == pytest.approx(0.5 + gap)
    assert value(m2, a3) == pytest.approx(eps / 2)


def test_toy_rejects_epsilon_ratio_outside_unit_interval():
    with pytest.raises(ValueError):
        make_toy_bandit(T=64, epsilon_ratio=1.0)


def test_bandit_observations(toy_env):
    a1, _, a3 = toy_env.policies
    assert len(enumerate_observations(toy_env, a1)) == 2
    informative = enumerate_observations(toy_env, a3)
    assert len(informative) == 3
    eps = 0.5 * toy_gap(1024)
    assert observation_likelihood(toy_env.model("M1"), a3, eps) == pytest.approx(0.5)
    assert observation_likelihood(toy_env.model("M2"), a3, eps) == 0.0
    assert observation_likelihood(toy_env.model("M2"), a3, eps / 2) == pytest.approx(1.0)


def test_bandit_rejects_trajectory_observation(toy_env):
    with pytest.raises(UnknownObservation):
        observation_likelihood(toy_env.model("M1"), toy_env.policies[0], (("s1", 0, 1.0),))
    with pytest.raises(UnknownObservation):
        observation_likelihood(toy_env.model("M1"), toy_env.policies[0], 1.5)


def test_cap_exceeded(toy_env):
    small = Environment(name="tiny", kind="bandit", models=toy_env.models, policies=toy_env.policies, cap=1)
    with pytest.raises(CapExceeded) as info:
        enumerate_observations(small, small.policies[0])
    assert info.value.cap == 1


def test_layered_likelihoods_sum_to_one(layered_env):
    assert len(layered_env.policies) == 16
    for policy in layered_env.policies[::5]:
        observations = enumerate_observations(layered_env, policy)
        for model in layered_env.models:
            total = sum(observation_likelihood(model, policy, o) for o in observations)
            assert total == pytest.approx(1.0, abs=1e-12)


def test_layered_trajectory_shape(layered_env, rng):
    policy = layered_env.policies[3]
    model = layered_env.model("Pa_A")
    obs = sample_observation(model, policy, rng)
    assert len(obs) == 2
    assert obs[0][0] == "s1"
    assert observation_likelihood(model, policy, obs) > 0
    steps = observation_steps(policy, obs)
    assert steps[0].next_state == obs[1][0]
    assert steps[1].next_state is None
    assert observation_return(obs) == pytest.approx(obs[0][2] + obs[1][2])


def test_off_policy_trajectory_has_zero_likelihood(layered_env):
    policy = layered_env.policies[0]
    s1 = policy.act("s1")
    wrong = (("s1", 1 - s1, 0.5), ("y", policy.act("y"), 0.0))
    assert observation_likelihood(layered_env.model("Pa_A"), policy, wrong) == 0.0


def test_q_star_value_matches_best_policy(layered_env):
    model = layered_env.model("Pb_B")
    best = max(value(model, p) for p in layered_env.policies)
    table = q_star(model)
    assert table.state_value(0, "s1") == pytest.approx(best)
    assert best <= 1.0


def test_q_policy_matches_value(layered_env):
    model = layered_env.model("Pa_B")
    for policy in layered_env.policies:
        table = q_policy(model, policy)
        assert table.q(0, "s1", policy.act("s1")) == pytest.approx(value(model, policy))
    zero = q_policy(model, layered_env.policies[0], reward_fn=lambda h, s, a: 0.0)
    assert np.all(zero.values == 0.0)


def test_mdp_rejects_return_above_one():
    one = DiscreteDistribution.point_mass(1.0)
    with pytest.raises(InvalidDistribution):
        TabularMDP(
            model_id="greedy",
            layers=(("s1",), ("x",)),
            actions=(0,),
            transitions={(0, "s1", 0): DiscreteDistribution.point_mass("x")},
            rewards={(0, "s1", 0): one, (1, "x", 0): one},
        )


def test_mdp_rejects_transition_leaving_next_layer():
    half = DiscreteDistribution.point_mass(0.5)
    with pytest.raises(InvalidDistribution):
        TabularMDP(
            model_id="leaky",
            layers=(("s1",), ("x",)),
            actions=(0,),
            transitions={(0, "s1", 0): DiscreteDistribution.point_mass("s1")},
            rewards={(0, "s1", 0): half, (1, "x", 0): half},
        )


def test_hybrid_adversary_alternates(hybrid_env):
    assert hybrid_env.model_at_round(1).model_id == "Pa+R1"
    assert hybrid_env.model_at_round(2).model_id == "Pa+R2"
    assert hybrid_env.model_at_round(3).model_id == "Pa+R1"


def test_feature_map_rejects_nonlinear_reward():
    fmap = FeatureMap(2, HYBRID_FEATURES)
    constant = RewardFunction("flat", {key: 1.0 for key in HYBRID_FEATURES})
    with pytest.raises(FeatureMapMismatch):
        fmap.theta(constant, horizon=2)


def test_feature_map_recovers_thetas(hybrid_env):
    thetas = hybrid_env.feature_map.validate(hybrid_env.reward_class, hybrid_env.horizon)
    assert np.allclose(thetas["R1"], [[1.0, 0.0], [1.0, 0.0]])
    assert np.allclose(thetas["R2"], [[0.0, 1.0], [0.0, 1.0]])


def test_policy_ids_for_arms():
    assert Policy.for_arm(2).policy_id == "a3"
    assert Policy.for_arm(0).arm == 0
    assert math.isclose(toy_gap(4), 1.0 / 32.0)


def _two_state_mdp() -> Environment:
    """H=2，S_2 = {x, y}，|A| = 2，每步奖励为 {0, 1/2} 上的伯努利"""
    layers = (("s1",), ("x", "y"))
    coin = DiscreteDistribution((0.0, 0.5), (0.5, 0.5))
    rewards = {(h, s, a): coin for h, layer in enumerate(layers) for s in layer for a in (0, 1)}
    transitions = {(0, "s1", a): DiscreteDistribution(("x", "y"), (0.5, 0.5)) for a in (0, 1)}
    model = TabularMDP("M", layers, (0, 1), transitions, rewards)
    return Environment(name="two_state", kind="stochastic_mdp", models=(model,),
                       policies=enumerate_policies(layers, (0, 1)), true_model_id="M")


def test_trajectory_space_is_the_product_of_step_supports():
    env = _two_state_mdp()
    observations = enumerate_observations(env)
    assert len(observations) == 32
    expected = {
        (("s1", a1, r1), (s2, a2, r2))
        for a1, r1, s2, a2, r2 in itertools.product((0, 1), (0.0, 0.5), ("x", "y"), (0, 1), (0.0, 0.5))
    }
    assert set(observations) == expected
    assert len(enumerate_observations(env, env.policies[0])) == 8


@pytest.mark.parametrize("slack, raises", [(0, False), (-1, True)])
def test_cap_is_inclusive(toy_env, slack, raises):
    a3 = toy_env.policies[2]
    size = len(enumerate_observations(toy_env, a3))
    env = Environment(name="capped", kind="bandit", models=toy_env.models, policies=toy_env.policies,
                      cap=size + slack)
    if raises:
        with pytest.raises(CapExceeded):
            enumerate_observations(env, a3)
    else:
        assert len(enumerate_observations(env, a3)) == size


def _assert_frequencies_match(env, model, policy, rng, draws=20_000):
    counts = Counter(sample_observation(model, policy, rng) for _ in range(draws))
    observations = enumerate_observations(env, policy)
    assert set(counts) <= set(observations)
    for o in observations:
        p = observation_likelihood(model, policy, o)
        sigma = math.sqrt(p * (1.0 - p) / draws)
        assert abs(counts[o] / draws - p) <= 4.0 * sigma + 1e-12


def test_bandit_samples_follow_the_likelihood(toy_env, rng):
    _assert_frequencies_match(toy_env, toy_env.model("M1"), toy_env.policies[2], rng)
    bandit = make_bernoulli_bandit([[0.7, 0.2]])
    _assert_frequencies_match(bandit, bandit.models[0], bandit.policies[1], rng)


def test_trajectory_samples_follow_the_likelihood(layered_env, rng):
    policy = layered_env.policies[6]
    _assert_frequencies_match(layered_env, layered_env.model("Pb_A"), policy, rng)


def test_deterministic_law_always_gives_the_same_outcome(toy_env, rng):
    m2, a3 = toy_env.model("M2"), toy_env.policies[2]
    assert {sample_observation(m2, a3, rng) for _ in range(50)} == {0.25 * toy_gap(1024)}


def test_reward_outside_the_observation_space_is_rejected(toy_env, layered_env):
    with pytest.raises(UnknownObservation):
        observation_likelihood(toy_env.model("M1"), toy_env.policies[0], 0.3)
    policy = layered_env.policies[0]
    s1, x = policy.act("s1"), policy.act("x")
    with pytest.raises(UnknownObservation):
        observation_likelihood(layered_env.model("Pa_A"), policy, (("s1", s1, 1.5), ("x", x, 0.0)))
