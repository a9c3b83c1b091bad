#!/usr/bin/env python3
"""
交互式智能体
Dig-DEC E2D（逐轮和分批）、Φ-AIR 基线、乐观 E2D 基线和两个参考智能体，以及整条交互序列的运行和遗憾记录
"""

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from typing_extensions import Literal

from src.divergences import DIVERGENCE_MODES, DivergenceMode, DivergenceTables
from src.environments import Environment, Observation, Policy, observation_return, sample_observation
from src.errors import IncompatibleAgentConfig
from src.estimation import (
    ENGINES,
    EngineName,
    EpochEngine,
    EstimationConfig,
    est_contribution,
    ledger_check,
    make_engine,
)
from src.partition import InfosetPartition
from src.saddle_solver import (
    SaddleConfig,
    SaddlePoint,
    policy_distribution,
    solve_minimax,
    solve_optimistic,
    world_distribution,
)

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DecisionRule = Literal["digdec", "optimistic", "uniform", "fixed"]
DECISIONS = ("digdec", "optimistic", "uniform", "fixed")

# Dig-DEC 的估计引擎与散度模式必须配对
COMPATIBLE = {"epoch": "av", "bilevel": "sq", "bayes": "none"}


@dataclass
class AgentConfig:
    """智能体配置"""
    name: str = "dig_dec"
    decision: DecisionRule = "digdec"
    eta: float = 1.0
    mode: DivergenceMode = "none"
    engine: EngineName = "bayes"
    tau: int = 1                                   # 批大小；> 1 只用于 epoch 引擎，即分段长度
    saddle: SaddleConfig = field(default_factory=SaddleConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    seed: int = 0
    fixed_policy: Optional[str] = None             # decision=fixed 时使用

    def __post_init__(self):
        if self.eta <= 0:
            raise IncompatibleAgentConfig(f"eta must be positive, got {self.eta}")
        if self.decision not in DECISIONS:
            raise IncompatibleAgentConfig(f"decision must be one of {DECISIONS}, got {self.decision!r}")
        if self.mode not in DIVERGENCE_MODES:
            raise IncompatibleAgentConfig(f"mode must be one of {DIVERGENCE_MODES}, got {self.mode!r}")
        if self.engine not in ENGINES:
            raise IncompatibleAgentConfig(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.decision == "digdec" and COMPATIBLE[self.engine] != self.mode:
            raise IncompatibleAgentConfig(
                f"engine {self.engine!r} requires mode {COMPATIBLE[self.engine]!r}, got {self.mode!r}")
        if self.tau < 1:
            raise IncompatibleAgentConfig(f"tau must be at least 1, got {self.tau}")
        if self.tau > 1:
            # bayes 与 bilevel 每轮都用单个观测更新 ρ，没有批内语义
            if self.engine != "epoch":
                raise IncompatibleAgentConfig(
                    f"tau={self.tau} needs the epoch engine; {self.engine!r} updates rho every round")
            if self.estimation.tau is None:
                self.estimation = replace(self.estimation, tau=self.tau)
            elif self.estimation.tau != self.tau:
                raise IncompatibleAgentConfig(
                    f"tau={self.tau} disagrees with estimation.tau={self.estimation.tau}")
        if self.decision == "fixed" and not self.fixed_policy:
            raise IncompatibleAgentConfig("decision 'fixed' needs fixed_policy")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise IncompatibleAgentConfig(f"unknown agent keys: {sorted(unknown)}")
        kwargs = dict(data)
        kwargs["saddle"] = SaddleConfig.from_dict(data.get("saddle"))
        kwargs["estimation"] = EstimationConfig.from_dict(data.get("estimation"))
        return cls(**kwargs)


@dataclass
class RoundLog:
    """单轮记录"""
    t: int
    rho: np.ndarray
    p_vector: np.ndarray
    policy_index: int
    policy_id: str
    observation: Observation
    reward: float
    nu_vector: np.ndarray
    gap: float
    gap_met: bool
    air_value: float
    model_index: int
    model_id: str
    solved: bool = True
    est_kl: Optional[float] = None
    est_div: Optional[float] = None


@dataclass
class RegretTrace:
    """一次运行的逐轮结果"""
    agent: str
    comparator: str
    logs: List[RoundLog]
    pseudo_regret: np.ndarray
    realized_regret: np.ndarray
    eta: float
    gap_tolerance: float
    comparator_infoset: int = -1

    @property
    def T(self) -> int:
        return len(self.logs)

    @property
    def gaps(self) -> np.ndarray:
        return np.array([log.gap for log in self.logs])

    @property
    def air_values(self) -> np.ndarray:
        return np.array([log.air_value for log in self.logs])

    @property
    def est_kl(self) -> np.ndarray:
        return np.array([log.est_kl if log.est_kl is not None else np.nan for log in self.logs])

    @property
    def est_div(self) -> np.ndarray:
        return np.array([log.est_div if log.est_div is not None else np.nan for log in self.logs])

    @property
    def cumulative_pseudo_regret(self) -> np.ndarray:
        return np.cumsum(self.pseudo_regret)

    @property
    def cumulative_realized_regret(self) -> np.ndarray:
        return np.cumsum(self.realized_regret)

    def ledger(self) -> Tuple[bool, float, float]:
        """回合累计伪遗憾与 Σ AIR + Est/η 的比较"""
        return ledger_check(self.pseudo_regret, self.air_values, self.est_kl, self.est_div,
                            self.eta, self.gap_tolerance)


def rho_lift(tables: DivergenceTables, rho: np.ndarray) -> np.ndarray:
    """ν(ψ) = ρ(φ(ψ)) / |φ|"""
    sizes = tables.membership.sum(axis=1)
    return rho[tables.owner] / sizes[tables.owner]


def _distribution_saddle(tables: DivergenceTables, p: np.ndarray, nu: np.ndarray) -> SaddlePoint:
    return SaddlePoint(p=policy_distribution(tables, p), nu=world_distribution(tables, nu),
                       air_value=0.0, gap=0.0, iterations=0)


class BaseAgent:
    """智能体公共部分：后验引擎、批次和决策缓存"""

    def __init__(self, config: AgentConfig, tables: DivergenceTables, T: int):
        self.config = config
        self.tables = tables
        self.engine = make_engine(config.engine, tables, T, config.estimation)
        self.batch = self.engine.tau if isinstance(self.engine, EpochEngine) else 1
        self.saddle: Optional[SaddlePoint] = None
        self.update_nu: Optional[np.ndarray] = None
        self.policy_index: Optional[int] = None
        self._rho_key: Optional[bytes] = None

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def rho(self) -> np.ndarray:
        return self.engine.rho

    def batch_start(self, t: int) -> bool:
        if isinstance(self.engine, EpochEngine):
            return self.engine.at_epoch_start
        return (t - 1) % self.batch == 0

    def decide(self) -> Tuple[SaddlePoint, np.ndarray]:
        """返回 (决策, 用于后验更新的 ν)"""
        raise NotImplementedError

    def refresh(self) -> bool:
        """ρ 变化时重新求解，返回是否新求解"""
        key = self.engine.rho.tobytes()
        if self.saddle is not None and key == self._rho_key:
            return False
        self.saddle, self.update_nu = self.decide()
        self._rho_key = key
        return True


class DigDecAgent(BaseAgent):
    """在 ρ_t 上求 min_p max_ν AIR，按 p_t 采样策略"""

    def decide(self) -> Tuple[SaddlePoint, np.ndarray]:
        warm = self.saddle.columns if self.saddle is not None else None
        saddle = solve_minimax(self.tables, self.engine.rho, self.config.eta, self.config.mode,
                               self.config.saddle, warm_columns=warm)
        return saddle, saddle.nu_vector


class PhiAirAgent(DigDecAgent):
    """无模型差异项、Bayes 后验的 Φ-AIR 基线"""


class OptimisticAgent(BaseAgent):
    """乐观 E2D 决策规则；后验更新用 ρ 的提升 ν(ψ) = ρ(φ)/|φ|"""

    def decide(self) -> Tuple[SaddlePoint, np.ndarray]:
        saddle = solve_optimistic(self.tables, self.engine.rho, self.config.eta, self.config.mode, self.config.saddle)
        return saddle, rho_lift(self.tables, self.engine.rho)


class UniformAgent(BaseAgent):
    """均匀随机选择策略"""

    def decide(self) -> Tuple[SaddlePoint, np.ndarray]:
        n = self.tables.num_policies
        nu = rho_lift(self.tables, self.engine.rho)
        return _distribution_saddle(self.tables, np.full(n, 1.0 / n), nu), nu


class FixedPolicyAgent(BaseAgent):
    """始终执行同一个策略"""

    def decide(self) -> Tuple[SaddlePoint, np.ndarray]:
        p = np.zeros(self.tables.num_policies)
        p[self.tables.env.policy_index(self.config.fixed_policy)] = 1.0
        nu = rho_lift(self.tables, self.engine.rho)
        return _distribution_saddle(self.tables, p, nu), nu


def build_agent(config: AgentConfig, tables: DivergenceTables, T: int) -> BaseAgent:
    if config.decision == "digdec":
        cls = PhiAirAgent if config.mode == "none" and config.engine == "bayes" else DigDecAgent
    else:
        cls = {"optimistic": OptimisticAgent, "uniform": UniformAgent, "fixed": FixedPolicyAgent}[config.decision]
    return cls(config, tables, T)


def _sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(p) - 1)


def agent_step(agent: BaseAgent, env: Environment, t: int, rng: np.random.Generator,
               history: Sequence[RoundLog] = ()) -> Tuple[Policy, RoundLog]:
    """执行一轮：必要时在 ρ_t 上求解，采样 π_t ∼ p_t，观测 o_t ∼ M_t(·|π_t)，更新后验

    分批时批内沿用同一个 π_k，只在批开始时重新决策和采样。
    """
    model = env.model_at_round(t, history)
    solved = False
    if agent.policy_index is None or agent.batch_start(t):
        solved = agent.refresh()
        agent.policy_index = _sample_index(agent.saddle.p_vector, rng)
    saddle = agent.saddle
    i = agent.policy_index
    policy = agent.tables.policies[i]
    observation = sample_observation(model, policy, rng)
    rho_t = np.array(agent.engine.rho, copy=True)
    agent.engine.observe(agent.update_nu, i, observation)
    if not saddle.gap_met and solved:
        logger.warning(f"第 {t} 轮鞍点间隙 {saddle.gap:.3g} 未达到容差")
    log = RoundLog(
        t=t,
        rho=rho_t,
        p_vector=saddle.p_vector,
        policy_index=i,
        policy_id=policy.policy_id,
        observation=observation,
        reward=observation_return(observation),
        nu_vector=agent.update_nu,
        gap=saddle.gap,
        gap_met=saddle.gap_met,
        air_value=saddle.air_value,
        model_index=env.model_index(model.model_id),
        model_id=model.model_id,
        solved=solved,
    )
    return policy, log


def hybrid_comparator(partition: InfosetPartition, reward_ids: Sequence[str],
                      tables: Optional[DivergenceTables] = None) -> Tuple[Policy, int]:
    """事后最优固定策略 argmax_π Σ_t V_{(P⋆,R_t)}(π)，平局取编号最小；返回策略及其信息集下标"""
    env = partition.environment
    tables = tables or DivergenceTables(partition)
    totals = np.zeros(len(env.policies))
    for reward_id in set(reward_ids):
        count = sum(1 for r in reward_ids if r == reward_id)
        m_idx = env.model_index(f"{env.true_transition_id}+{reward_id}")
        totals += count * tables.model_values[:, m_idx]
    best = float(np.max(totals))
    index = int(np.flatnonzero(totals >= best - 1e-12)[0])
    policy = env.policies[index]
    return policy, partition.infoset_for(env.true_transition_id, policy.policy_id)


def stochastic_comparator(partition: InfosetPartition) -> Tuple[Policy, int]:
    """π_{M⋆}：真实模型所在信息集的策略"""
    k = partition.infoset_of_model(partition.environment.true_model_id)
    return partition.infosets[k].policy, k


def run_episode_sequence(agent: BaseAgent, env: Environment, T: int, rng: np.random.Generator,
                         comparator: Optional[Tuple[Policy, int]] = None, oracle: bool = True) -> RegretTrace:
    """运行 T 轮并计算逐轮伪遗憾（精确期望）和实际遗憾

    Args:
        comparator: (π⋆, φ⋆ 下标)；None 时随机设定用 π_{M⋆}，混合设定事后计算
        oracle: 是否计算 Est 诊断（需要真实 φ⋆ 和 M_t，智能体不可见）
    """
    tables = agent.tables
    partition = tables.partition
    logs: List[RoundLog] = []
    for t in range(1, T + 1):
        _, log = agent_step(agent, env, t, rng, logs)
        logs.append(log)

    if comparator is None:
        if env.kind == "hybrid_mdp":
            comparator = hybrid_comparator(partition, [partition.reward_id_of(log.model_id) for log in logs], tables)
        else:
            comparator = stochastic_comparator(partition)
    policy, phi_star = comparator
    c_idx = env.policy_index(policy.policy_id)
    values = tables.model_values                       # (|Π|, |M|)
    pseudo = np.array([values[c_idx, log.model_index] - log.p_vector @ values[:, log.model_index] for log in logs])
    realized = np.array([values[c_idx, log.model_index] - log.reward for log in logs])

    if oracle:
        for log in logs:
            log.est_kl, log.est_div = est_contribution(
                tables, log.p_vector, log.rho, log.nu_vector, log.model_index, phi_star, agent.config.mode)

    logger.info(f"{agent.name}: T={T}, 累计伪遗憾={pseudo.sum():.6g}, 比较策略={policy.policy_id}")
    return RegretTrace(
        agent=agent.name,
        comparator=policy.policy_id,
        logs=logs,
        pseudo_regret=pseudo,
        realized_regret=realized,
        eta=agent.config.eta,
        gap_tolerance=agent.config.saddle.gap_tolerance,
        comparator_infoset=phi_star,
    )
