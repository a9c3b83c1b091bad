import numpy as np
import pytest

from src.agents import (
    AgentConfig,
    DigDecAgent,
    FixedPolicyAgent,
    OptimisticAgent,
    PhiAirAgent,
    UniformAgent,
    agent_step,
    build_agent,
    hybrid_comparator,
    rho_lift,
    run_episode_sequence,
)
from src.bench import run_rng
from src.errors import IncompatibleAgentConfig
from src.presets import toy_gap

DIGDEC_SQ = AgentConfig(name="dig_dec_sq", decision="digdec", mode="sq", engine="bilevel")
DIGDEC_AV = AgentConfig(name="dig_dec_av", decision="digdec", mode="av", engine="epoch")
UNIFORM = AgentConfig(name="uniform", decision="uniform")


def _normalized(vector):
    return abs(float(np.sum(vector)) - 1.0) <= 1e-9


@pytest.mark.parametrize("engine, mode", [("epoch", "sq"), ("bilevel", "av"), ("bayes", "sq")])
def test_engine_must_match_mode(engine, mode):
    with pytest.raises(IncompatibleAgentConfig):
        AgentConfig(decision="digdec", engine=engine, mode=mode)


def test_baselines_may_pair_freely():
    config = AgentConfig(decision="optimistic", engine="bilevel", mode="av")
    assert config.engine == "bilevel"


def test_config_validation():
    with pytest.raises(IncompatibleAgentConfig):
        AgentConfig.from_dict({"name": "x", "learning_rate": 0.1})
    with pytest.raises(IncompatibleAgentConfig):
        AgentConfig(decision="fixed")
    with pytest.raises(IncompatibleAgentConfig):
        AgentConfig(eta=-1.0)
    config = AgentConfig.from_dict({"name": "x", "saddle": {"max_iters": 7}, "estimation": {"delta": 0.05}})
    assert config.saddle.max_iters == 7
    assert config.estimation.delta == 0.05


def test_build_agent_classes(toy_tables):
    assert type(build_agent(DIGDEC_SQ, toy_tables, 8)) is DigDecAgent
    assert type(build_agent(AgentConfig(name="phi"), toy_tables, 8)) is PhiAirAgent
    assert isinstance(build_agent(AgentConfig(decision="optimistic"), toy_tables, 8), OptimisticAgent)
    assert isinstance(build_agent(UNIFORM, toy_tables, 8), UniformAgent)
    fixed = AgentConfig(decision="fixed", fixed_policy="a2")
    assert isinstance(build_agent(fixed, toy_tables, 8), FixedPolicyAgent)


def test_rho_lift_spreads_mass_over_members(layered_tables):
    rho = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(rho_lift(layered_tables, rho), rho[layered_tables.owner])


def test_digdec_starts_on_the_revealing_arm(toy_tables):
    agent = build_agent(DIGDEC_SQ, toy_tables, 8)
    trace = run_episode_sequence(agent, toy_tables.env, 8, run_rng(1, DIGDEC_SQ.name))
    assert trace.logs[0].p_vector[2] >= 0.99
    assert trace.comparator == "a2"
    for log in trace.logs:
        assert _normalized(log.p_vector) and _normalized(log.rho) and _normalized(log.nu_vector)
    ok, lhs, rhs = trace.ledger()
    assert ok, (lhs, rhs)


def test_uniform_regret_is_exact(toy_tables):
    gap = toy_gap(1024)
    eps = 0.5 * gap
    agent = build_agent(UNIFORM, toy_tables, 20)
    trace = run_episode_sequence(agent, toy_tables.env, 20, run_rng(3, UNIFORM.name))
    expected = (2 * gap + 0.5 + gap - eps / 2) / 3
    assert np.allclose(trace.pseudo_regret, expected, atol=1e-12)
    assert trace.cumulative_pseudo_regret[-1] == pytest.approx(20 * expected)


def test_fixed_comparator_policy_has_zero_regret(toy_tables):
    config = AgentConfig(name="fixed", decision="fixed", fixed_policy="a2")
    trace = run_episode_sequence(build_agent(config, toy_tables, 5), toy_tables.env, 5, run_rng(1, "fixed"))
    assert np.allclose(trace.pseudo_regret, 0.0)


def test_runs_are_reproducible(toy_tables):
    traces = [
        run_episode_sequence(build_agent(DIGDEC_SQ, toy_tables, 12), toy_tables.env, 12, run_rng(5, DIGDEC_SQ.name))
        for _ in range(2)
    ]
    assert np.array_equal(traces[0].pseudo_regret, traces[1].pseudo_regret)
    assert [log.policy_id for log in traces[0].logs] == [log.policy_id for log in traces[1].logs]


def test_without_oracle_est_is_missing(toy_tables):
    trace = run_episode_sequence(build_agent(UNIFORM, toy_tables, 4), toy_tables.env, 4, run_rng(1, "u"),
                                 oracle=False)
    assert np.all(np.isnan(trace.est_kl))
    assert np.all(np.isnan(trace.est_div))


def test_batched_agent_keeps_its_policy(toy_tables):
    config = AgentConfig(name="batched", decision="uniform", engine="epoch", tau=4)
    assert config.estimation.tau == 4
    trace = run_episode_sequence(build_agent(config, toy_tables, 12), toy_tables.env, 12, run_rng(2, "batched"))
    chosen = [log.policy_index for log in trace.logs]
    for start in (0, 4, 8):
        assert len(set(chosen[start:start + 4])) == 1


def test_epoch_agent_decides_at_epoch_starts(layered_tables):
    agent = build_agent(DIGDEC_AV, layered_tables, 16)
    assert agent.batch == 4
    trace = run_episode_sequence(agent, layered_tables.env, 16, run_rng(1, DIGDEC_AV.name))
    chosen = [log.policy_index for log in trace.logs]
    for start in (0, 4, 8, 12):
        assert len(set(chosen[start:start + 4])) == 1
    assert all(not log.solved for t, log in enumerate(trace.logs) if t % 4)


def test_hybrid_comparator_is_best_in_hindsight(hybrid_tables):
    env = hybrid_tables.env
    reward_ids = ["R1", "R2", "R1"]
    policy, k = hybrid_comparator(hybrid_tables.partition, reward_ids, hybrid_tables)
    totals = [
        sum(hybrid_tables.model_values[i, env.model_index(f"Pa+{r}")] for r in reward_ids)
        for i in range(len(env.policies))
    ]
    assert totals[env.policy_index(policy.policy_id)] == pytest.approx(max(totals))
    assert hybrid_tables.partition.infosets[k].policy.policy_id == policy.policy_id


def test_hybrid_run_uses_the_adversary(hybrid_tables):
    agent = build_agent(UNIFORM, hybrid_tables, 4)
    trace = run_episode_sequence(agent, hybrid_tables.env, 4, run_rng(1, UNIFORM.name))
    assert [log.model_id for log in trace.logs] == ["Pa+R1", "Pa+R2", "Pa+R1", "Pa+R2"]


def test_agent_step_records_the_round(toy_tables):
    agent = build_agent(DIGDEC_SQ, toy_tables, 4)
    rng = run_rng(7, DIGDEC_SQ.name)
    policy, log = agent_step(agent, toy_tables.env, 1, rng)
    assert log.t == 1
    assert log.solved
    assert log.policy_id == policy.policy_id
    assert log.model_id == toy_tables.env.true_model_id
    assert _normalized(log.p_vector)
    _, second = agent_step(agent, toy_tables.env, 2, rng, [log])
    assert second.t == 2
    assert _normalized(second.rho)


@pytest.mark.parametrize("decision, engine, mode", [
    ("uniform", "bayes", "none"),
    ("digdec", "bayes", "none"),
    ("digdec", "bilevel", "sq"),
])
def test_batching_needs_the_epoch_engine(decision, engine, mode):
    with pytest.raises(IncompatibleAgentConfig):
        AgentConfig(decision=decision, engine=engine, mode=mode, tau=4)


def test_batch_size_must_match_epoch_length():
    with pytest.raises(IncompatibleAgentConfig):
        AgentConfig.from_dict({"decision": "digdec", "mode": "av", "engine": "epoch", "tau": 4,
                               "estimation": {"tau": 6}})
