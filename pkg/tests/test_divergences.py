import math

import numpy as np
import pytest

from src.distribution import DiscreteDistribution
from src.divergences import (
    EstimationFunctionSpec,
    bregman_of_D,
    combined_divergence,
    d_av,
    d_sq,
    d_sq_forms,
    kl,
    kl_arrays,
    posterior_infoset,
)
from src.environments import (
    Environment,
    FeatureMap,
    RewardFunction,
    TransitionKernel,
    compose_hybrid_model,
    enumerate_observations,
    enumerate_policies,
    observation_likelihood,
)
from src.errors import INFINITE_KL, NotComplete, ZeroEvidence, is_infinite
from src.partition import build_partition
from src.presets import make_bernoulli_bandit, toy_gap


def _uniform_world(tables):
    return DiscreteDistribution.uniform([w.point_id for w in tables.partition.world_points])


def _uniform_rho(tables):
    return DiscreteDistribution.uniform([phi.infoset_id for phi in tables.partition.infosets])


def test_kl_basics():
    p = DiscreteDistribution(("a", "b"), [0.5, 0.5])
    q = DiscreteDistribution(("a", "b"), [0.25, 0.75])
    expected = 0.5 * math.log(2.0) + 0.5 * math.log(0.5 / 0.75)
    assert kl(p, q) == pytest.approx(expected)
    assert kl(p, p) == 0.0
    assert kl(p, DiscreteDistribution.point_mass("a")) is INFINITE_KL
    assert kl(DiscreteDistribution.point_mass("a"), p) == pytest.approx(math.log(2.0))
    assert is_infinite(kl_arrays(np.array([0.5, 0.5]), np.array([1.0, 0.0])))


def test_posterior_reveals_model_on_informative_arm(toy_tables):
    partition = toy_tables.partition
    a3 = toy_tables.env.policies[2]
    eps = 0.5 * toy_gap(1024)
    post = posterior_infoset(_uniform_world(toy_tables), a3, eps, partition)
    m1_infoset = partition.infosets[partition.infoset_of_model("M1")].infoset_id
    assert post.prob(m1_infoset) == pytest.approx(1.0)


def test_zero_evidence(toy_tables):
    partition = toy_tables.partition
    m2_point = next(w.point_id for w in partition.world_points if w.model_id == "M2")
    nu = DiscreteDistribution.point_mass(m2_point)
    with pytest.raises(ZeroEvidence):
        posterior_infoset(nu, toy_tables.env.policies[2], 0.0, partition)


def test_information_of_revealing_arm_is_log_two(toy_tables):
    a3 = toy_tables.env.policies[2]
    value = combined_divergence(_uniform_world(toy_tables), _uniform_rho(toy_tables), a3, toy_tables.partition)
    assert value == pytest.approx(math.log(2.0))


def test_divergence_is_infinite_when_rho_misses_a_posterior(toy_tables):
    partition = toy_tables.partition
    a3 = toy_tables.env.policies[2]
    rho = DiscreteDistribution.point_mass(partition.infosets[partition.infoset_of_model("M2")].infoset_id)
    assert combined_divergence(_uniform_world(toy_tables), rho, a3, partition) is INFINITE_KL


def test_bregman_of_identical_worlds_is_zero(toy_tables):
    nu = _uniform_world(toy_tables)
    for policy in toy_tables.env.policies:
        assert bregman_of_D(nu, nu, _uniform_rho(toy_tables), policy, toy_tables.partition) == pytest.approx(0.0)


def test_own_infoset_has_zero_divergence(layered_tables):
    partition = layered_tables.partition
    spec = layered_tables.spec
    for model in layered_tables.env.models:
        phi = partition.infosets[partition.infoset_of_model(model.model_id)]
        for policy in layered_tables.env.policies[::3]:
            assert d_av(phi, model, policy, spec) == pytest.approx(0.0, abs=1e-12)
            assert d_sq(phi, model, policy, spec) == pytest.approx(0.0, abs=1e-12)


def test_pointwise_divergences_match_tables(layered_tables):
    env = layered_tables.env
    partition = layered_tables.partition
    spec = layered_tables.spec
    av, sq = layered_tables.model_dbar("av"), layered_tables.model_dbar("sq")
    for i in (0, 7, 15):
        policy = env.policies[i]
        for k, phi in enumerate(partition.infosets):
            for m, model in enumerate(env.models):
                assert av[i, k, m] == pytest.approx(d_av(phi, model, policy, spec), abs=1e-12)
                assert sq[i, k, m] == pytest.approx(d_sq(phi, model, policy, spec), abs=1e-12)


def test_average_error_never_exceeds_squared_error(layered_tables, hybrid_tables):
    assert np.all(layered_tables.model_dbar("av") <= layered_tables.model_dbar("sq") + 1e-12)
    # 混合设定的 B² = d 只出现在 D̄_sq 中，比较时乘回 d
    scale = hybrid_tables.spec.ordering_scale
    assert np.all(hybrid_tables.model_dbar("av") <= scale * hybrid_tables.model_dbar("sq") + 1e-12)
    for tables in (layered_tables, hybrid_tables):
        assert tables.dual_form_gap() <= 1e-9


def test_squared_error_forms_agree(layered_tables):
    env = layered_tables.env
    phi = layered_tables.partition.infosets[0]
    xi_form, gap_form = d_sq_forms(phi, env.model("Pb_B"), env.policies[5], layered_tables.spec)
    assert xi_form == pytest.approx(gap_form, abs=1e-12)
    assert gap_form >= 0


def test_squared_error_needs_completeness(incomplete_env):
    partition = build_partition(incomplete_env)
    spec = EstimationFunctionSpec.for_partition(partition)
    phi = partition.infosets[partition.infoset_of_model("Pa_B")]
    with pytest.raises(NotComplete):
        d_sq(phi, incomplete_env.model("Pa_A"), incomplete_env.policies[0], spec)


def test_estimation_spec_kinds(layered_tables, hybrid_tables):
    horizon = hybrid_tables.env.horizon
    assert layered_tables.spec.kind == "stochastic_td"
    assert layered_tables.spec.n_components == 1
    assert layered_tables.spec.bound == 1.0
    assert layered_tables.spec.bound_sq == 1.0
    assert layered_tables.spec.ordering_scale == 1.0
    assert hybrid_tables.spec.kind == "hybrid_basis_td"
    assert hybrid_tables.spec.n_components == 2
    assert hybrid_tables.spec.bound == 1.0
    assert hybrid_tables.spec.bound_sq == pytest.approx(math.sqrt(2.0))
    assert hybrid_tables.spec.normalizer == pytest.approx(1.0 / horizon)
    assert hybrid_tables.spec.normalizer_sq == pytest.approx(1.0 / (2.0 * horizon))
    assert hybrid_tables.spec.ordering_scale == pytest.approx(2.0)


def test_mode_none_has_no_model_term(toy_tables):
    assert not np.any(toy_tables.model_dbar("none"))


def _world(tables, probs):
    return DiscreteDistribution(tuple(w.point_id for w in tables.partition.world_points), probs)


def _interior(rng, n):
    return 0.5 * rng.dirichlet(np.full(n, 2.0)) + 0.5 / n


@pytest.mark.parametrize("instance, policy_index", [("toy", 0), ("toy", 2), ("layered", 0), ("layered", 9)])
@pytest.mark.parametrize("lam", [0.25, 0.5, 0.8])
def test_combined_divergence_is_convex_in_nu(request, rng, instance, policy_index, lam):
    tables = request.getfixturevalue(f"{instance}_tables")
    policy = tables.env.policies[policy_index]
    rho = _uniform_rho(tables)
    n = tables.num_world_points
    p, q = _interior(rng, n), _interior(rng, n)
    mix = combined_divergence(_world(tables, lam * p + (1 - lam) * q), rho, policy, tables.partition,
                              tables.spec, mode="av")
    ends = (lam * combined_divergence(_world(tables, p), rho, policy, tables.partition, tables.spec, mode="av")
            + (1 - lam) * combined_divergence(_world(tables, q), rho, policy, tables.partition, tables.spec, mode="av"))
    assert mix <= ends + 1e-12


@pytest.mark.parametrize("size", [2, 3, 6])
def test_pinsker_bound(rng, size):
    support = tuple(range(size))
    for _ in range(100):
        p = DiscreteDistribution(support, rng.dirichlet(np.ones(size)))
        q = DiscreteDistribution(support, rng.dirichlet(np.ones(size)))
        tv = 0.5 * float(np.sum(np.abs(p.probs - q.probs)))
        assert 2.0 * tv ** 2 <= kl(p, q) + 1e-12


@pytest.mark.parametrize("instance, policy_index", [("toy", 2), ("toy", 1), ("layered", 3), ("layered", 12)])
def test_bregman_matches_finite_difference(request, rng, instance, policy_index):
    tables = request.getfixturevalue(f"{instance}_tables")
    policy = tables.env.policies[policy_index]
    rho = _uniform_rho(tables)
    n = tables.num_world_points
    p, q = _interior(rng, n), _interior(rng, n)

    def value_at(probs):
        return combined_divergence(_world(tables, probs), rho, policy, tables.partition)

    step = 1e-5
    slope = (value_at(q + step * (p - q)) - value_at(q - step * (p - q))) / (2 * step)
    expected = value_at(p) - value_at(q) - slope
    got = bregman_of_D(_world(tables, p), _world(tables, q), rho, policy, tables.partition)
    assert got == pytest.approx(expected, abs=1e-5)
    assert got >= 0


def test_kl_of_bernoulli_pair():
    p = DiscreteDistribution((0, 1), [0.25, 0.75])
    q = DiscreteDistribution((0, 1), [0.5, 0.5])
    assert kl(p, q) == pytest.approx(0.130812, abs=1e-6)


@pytest.mark.parametrize("means, expected_av, expected_sq", [
    ([[0.6], [0.5]], 0.01, 0.01),
    ([[0.7], [0.5]], 0.04, 0.04),
])
def test_single_arm_divergences(means, expected_av, expected_sq):
    partition = build_partition(make_bernoulli_bandit(means))
    spec = EstimationFunctionSpec.for_partition(partition)
    env = partition.environment
    phi = partition.infosets[partition.infoset_of_model("M1")]
    policy = env.policies[0]
    assert spec.bound == spec.bound_sq == 1.0
    assert d_av(phi, env.model("M2"), policy, spec) == pytest.approx(expected_av, abs=1e-12)
    assert d_sq(phi, env.model("M2"), policy, spec) == pytest.approx(expected_sq, abs=1e-12)


def _second_feature_env():
    """两条转移的第一维特征期望相同，只有第二维不同"""
    layers = (("s1",), ("x", "y"))
    features = {(0, "s1", 0): (0.0, 0.0), (1, "x", 0): (0.25, 0.5), (1, "y", 0): (0.25, 0.0)}
    point = DiscreteDistribution.point_mass
    kernels = tuple(
        TransitionKernel(pid, layers, (0,), {(0, "s1", 0): point(s)}) for pid, s in (("P1", "x"), ("P2", "y"))
    )
    reward = RewardFunction("R", {key: f[0] + f[1] for key, f in features.items()})
    return Environment(
        name="second_feature",
        kind="hybrid_mdp",
        models=tuple(compose_hybrid_model(P, reward) for P in kernels),
        policies=enumerate_policies(layers, (0,)),
        feature_map=FeatureMap(2, features),
        transitions=kernels,
        reward_class=(reward,),
    )


def test_hybrid_average_error_takes_the_mismatched_component():
    partition = build_partition(_second_feature_env())
    spec = EstimationFunctionSpec.for_partition(partition)
    env = partition.environment
    policy = env.policies[0]
    phi = partition.infosets[partition.infoset_for("P1", policy.policy_id)]
    model = env.model("P2+R")
    mean_ell = sum(observation_likelihood(model, policy, o) * spec.ell(phi, policy, o)
                   for o in enumerate_observations(env, policy))
    per_component = np.sum(mean_ell ** 2, axis=0) * spec.normalizer
    assert per_component[0] == pytest.approx(0.0, abs=1e-12)
    assert int(np.argmax(per_component)) == 1
    assert d_av(phi, model, policy, spec) == pytest.approx(per_component[1])
    assert d_av(phi, model, policy, spec) == pytest.approx(0.25 / 2)
