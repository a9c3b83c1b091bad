#!/usr/bin/env python3
"""
在线估计
三种后验更新引擎（Bayes、分段平均误差、双层平方误差）和 Est 诊断
"""

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, rel_entr, softmax
from typing_extensions import Literal, Protocol

from src.distribution import DiscreteDistribution, check_simplex
from src.divergences import DivergenceMode, DivergenceTables, posterior_infoset
from src.environments import Observation, Policy
from src.errors import OddEpoch, ZeroEvidence
from src.partition import InfosetPartition

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EngineName = Literal["bayes", "epoch", "bilevel"]
ENGINES = ("bayes", "epoch", "bilevel")


@dataclass
class EstimationConfig:
    """估计引擎配置"""
    delta: float = 0.01             # 分段引擎 ι 中的置信参数
    tau: Optional[int] = None       # 分段长度，None 时由 T 推出

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.tau is not None and self.tau % 2:
            raise OddEpoch(f"epoch length must be even, got {self.tau}")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "EstimationConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in known})


def epoch_length(T: int) -> int:
    """τ = round(T^{1/3})，奇数时加一"""
    tau = max(2, int(round(T ** (1.0 / 3.0))))
    return tau + 1 if tau % 2 else tau


def geometric_mixture(log_terms: np.ndarray, weight: float) -> np.ndarray:
    """ρ ∝ exp(weight · log_terms)，log_terms 为 −inf 的分量保持为 0

    Raises:
        ZeroEvidence: 所有分量都为 0
    """
    log_terms = np.asarray(log_terms, dtype=float)
    if np.all(np.isneginf(log_terms)):
        raise ZeroEvidence("geometric mixture has no positive component")
    scaled = weight * log_terms
    return np.where(np.isneginf(log_terms), 0.0, np.exp(scaled - logsumexp(scaled)))


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=float))


def bayes_update(nu: DiscreteDistribution, rho: DiscreteDistribution, policy: Policy, observation: Observation,
                 partition: InfosetPartition) -> DiscreteDistribution:
    """ρ′ = ν_φ(·|π, o)，与 ρ 无关"""
    return posterior_infoset(nu, policy, observation, partition)


def split_product_loss(ell_values: np.ndarray, normalizer: float) -> np.ndarray:
    """L_k(φ) = τ · normalizer · Σ_h Σ_j (前半段 ℓ 均值)(后半段 ℓ 均值)

    Args:
        ell_values: (τ, |Φ|, H, N)
        normalizer: 1/(B²H)

    Raises:
        OddEpoch: τ 为奇数
    """
    ell_values = np.asarray(ell_values, dtype=float)
    tau = ell_values.shape[0]
    if tau % 2:
        raise OddEpoch(f"epoch length must be even, got {tau}")
    half = tau // 2
    minus = ell_values[:half].mean(axis=0)
    plus = ell_values[half:].mean(axis=0)
    return tau * normalizer * np.sum(minus * plus, axis=(1, 2))


def epoch_loss(tables: DivergenceTables, policy_index: int, observations: Sequence[Observation]) -> np.ndarray:
    """一个 epoch 内观测的分段乘积损失 L_k"""
    ell_values = np.array([tables.ell_matrix(policy_index, o) for o in observations])
    return split_product_loss(ell_values, tables.spec.normalizer)


def epoch_posterior_update(rho_k: np.ndarray, posteriors: np.ndarray, loss: np.ndarray,
                           gamma: float, beta: float) -> np.ndarray:
    """argmin_ρ ⟨ρ, L + (4γ+2/β)L²⟩ + Σ_t KL(ρ, q_t) + (1/γ) KL(ρ, ρ_k) 的闭式解

    ρ(φ) ∝ [ρ_k(φ)^{1/γ} Π_t q_t(φ) exp(−c(φ))]^{1/(τ + 1/γ)}
    """
    posteriors = np.atleast_2d(posteriors)
    tau = posteriors.shape[0]
    c = loss + (4.0 * gamma + 2.0 / beta) * loss ** 2
    log_terms = _log(rho_k) / gamma + np.sum(_log(posteriors), axis=0) - c
    return geometric_mixture(log_terms, 1.0 / (tau + 1.0 / gamma))


def bilevel_top_update(rho_t: np.ndarray, posterior: np.ndarray, loss: np.ndarray, bonus: np.ndarray,
                       gamma: float) -> np.ndarray:
    """argmin_ρ ⟨ρ, L + 4γL² + b⟩ + KL(ρ, q) + (1/γ) KL(ρ, ρ_t) 的闭式解"""
    log_terms = _log(posterior) + _log(rho_t) / gamma - (loss + 4.0 * gamma * loss ** 2 + bonus)
    return geometric_mixture(log_terms, 1.0 / (1.0 + 1.0 / gamma))


def _kl_vector(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(rel_entr(p, q)))


def epoch_objective(rho: np.ndarray, rho_k: np.ndarray, posteriors: np.ndarray, loss: np.ndarray,
                    gamma: float, beta: float) -> float:
    """epoch_posterior_update 所最小化的目标值"""
    c = loss + (4.0 * gamma + 2.0 / beta) * loss ** 2
    return float(rho @ c) + sum(_kl_vector(rho, q) for q in np.atleast_2d(posteriors)) \
        + _kl_vector(rho, rho_k) / gamma


def bilevel_objective(rho: np.ndarray, rho_t: np.ndarray, posterior: np.ndarray, loss: np.ndarray,
                      bonus: np.ndarray, gamma: float) -> float:
    """bilevel_top_update 所最小化的目标值"""
    return float(rho @ (loss + 4.0 * gamma * loss ** 2 + bonus)) + _kl_vector(rho, posterior) \
        + _kl_vector(rho, rho_t) / gamma


@dataclass
class EpochState:
    """分段估计器的状态"""
    rho: np.ndarray
    tau: int
    n_components: int
    horizon: int
    num_epochs: int
    delta: float = 0.01
    k: int = 0
    buffer: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.tau % 2:
            raise OddEpoch(f"epoch length must be even, got {self.tau}")
        self.iota = math.log(12 * self.n_components * max(self.num_epochs, 1) * self.horizon / self.delta)
        self.beta = 7 * self.tau * self.n_components * self.iota
        self.gamma = 1.0 / (2 * self.beta)


@dataclass
class BilevelState:
    """双层估计器的状态

    q[:, φ] 是内层条件分布 q_t(·|φ)；weighted_sums[φ', φ] = Σ_s ρ_s(φ)Δ_s(φ', φ)。
    """
    rho: np.ndarray
    q: np.ndarray
    weighted_sums: np.ndarray
    running_max: np.ndarray
    t: int = 0
    bonus_total: float = 0.0

    @classmethod
    def initial(cls, num_infosets: int) -> "BilevelState":
        return cls(
            rho=np.full(num_infosets, 1.0 / num_infosets),
            q=np.full((num_infosets, num_infosets), 1.0 / num_infosets),
            weighted_sums=np.zeros((num_infosets, num_infosets)),
            running_max=np.zeros(num_infosets),
        )

    @property
    def num_infosets(self) -> int:
        return len(self.rho)

    @property
    def iota(self) -> float:
        return 64.0 * math.log(self.num_infosets)

    @property
    def gamma(self) -> float:
        return 1.0 / (4.0 * self.iota)


def bilevel_update(state: BilevelState, delta: np.ndarray, posterior: np.ndarray) -> BilevelState:
    """双层引擎单轮：计算 L_t、b_t，更新顶层 ρ，刷新内层 q

    Args:
        state: 当前状态（原地更新并返回）
        delta: Δ_t(φ', φ)，行为 φ'
        posterior: (ν_t)_φ(·|π_t, o_t)
    """
    rho_t = state.rho
    loss = np.diag(delta) - np.sum(state.q * delta, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        bonus = np.where(rho_t > 0, np.maximum(rho_t - state.running_max, 0.0) / rho_t, 0.0) * state.iota
    state.bonus_total += float(rho_t @ bonus)

    if state.num_infosets > 1:
        new_rho = bilevel_top_update(rho_t, posterior, loss, bonus, state.gamma)
    else:
        new_rho = np.ones(1)

    state.weighted_sums += rho_t[None, :] * delta
    state.running_max = np.maximum(state.running_max, rho_t)
    with np.errstate(divide="ignore"):
        alpha = np.where(state.running_max > 0, 1.0 / (16.0 * state.running_max), 0.0)
    state.q = softmax(-alpha[None, :] * state.weighted_sums, axis=0)
    state.rho = new_rho
    state.t += 1
    return state


def bonus_identity_check(state: BilevelState) -> Tuple[float, float]:
    """(½ Σ_t ⟨ρ_t, b_t⟩, 32 log|Φ| Σ_φ max_t ρ_t(φ))，两者应相等"""
    lhs = 0.5 * state.bonus_total
    rhs = 32.0 * math.log(state.num_infosets) * float(np.sum(state.running_max))
    return lhs, rhs


class PosteriorEngine(Protocol):
    """ρ_t → ρ_{t+1} 的后验更新引擎"""
    name: str
    rho: np.ndarray

    def observe(self, nu: np.ndarray, policy_index: int, observation: Observation) -> bool:
        """吸收一个观测，返回 ρ 是否改变"""
        ...


class BayesEngine:
    """ρ_{t+1} = ν_t(·|π_t, o_t)"""
    name = "bayes"

    def __init__(self, tables: DivergenceTables):
        self.tables = tables
        self.rho = np.full(tables.num_infosets, 1.0 / tables.num_infosets)

    def observe(self, nu: np.ndarray, policy_index: int, observation: Observation) -> bool:
        new_rho = self.tables.posterior(nu, policy_index, observation)
        changed = not np.array_equal(new_rho, self.rho)
        self.rho = check_simplex(new_rho, "rho")
        return changed


class EpochEngine:
    """分段分批平均误差估计器

    每 τ 轮更新一次 ρ；T 不能被 τ 整除时，最后不完整的一段只执行不更新。
    """
    name = "epoch"

    def __init__(self, tables: DivergenceTables, T: int, config: Optional[EstimationConfig] = None):
        config = config or EstimationConfig()
        self.tables = tables
        tau = config.tau or epoch_length(T)
        num_infosets = tables.num_infosets
        self.state = EpochState(
            rho=np.full(num_infosets, 1.0 / num_infosets),
            tau=tau,
            n_components=tables.spec.n_components,
            horizon=tables.env.horizon,
            num_epochs=T // tau,
            delta=config.delta,
        )
        self.losses: List[np.ndarray] = []
        logger.info(f"分段引擎: τ={tau}, K={T // tau}, ι={self.state.iota:.4g}, γ={self.state.gamma:.3g}")

    @property
    def rho(self) -> np.ndarray:
        return self.state.rho

    @property
    def tau(self) -> int:
        return self.state.tau

    @property
    def at_epoch_start(self) -> bool:
        return not self.state.buffer

    def observe(self, nu: np.ndarray, policy_index: int, observation: Observation) -> bool:
        state = self.state
        ell = self.tables.ell_matrix(policy_index, observation)
        q = self.tables.posterior(nu, policy_index, observation)
        state.buffer.append((ell, q))
        if len(state.buffer) < state.tau:
            return False
        ell_values = np.array([e for e, _ in state.buffer])
        posteriors = np.array([q for _, q in state.buffer])
        loss = split_product_loss(ell_values, self.tables.spec.normalizer)
        bound = state.tau * state.n_components
        if np.any(np.abs(loss) > bound + 1e-9):
            logger.warning(f"epoch {state.k} 的 L_k 超出范围 τN={bound}: {loss}")
        self.losses.append(loss)
        state.rho = check_simplex(epoch_posterior_update(state.rho, posteriors, loss, state.gamma, state.beta), "rho")
        state.buffer.clear()
        state.k += 1
        logger.debug(f"epoch {state.k} 结束: ρ={np.round(state.rho, 6)}")
        return True


class BilevelEngine:
    """双层平方误差估计器，每轮更新"""
    name = "bilevel"

    def __init__(self, tables: DivergenceTables):
        self.tables = tables
        self.state = BilevelState.initial(tables.num_infosets)

    @property
    def rho(self) -> np.ndarray:
        return self.state.rho

    def observe(self, nu: np.ndarray, policy_index: int, observation: Observation) -> bool:
        old = self.state.rho
        delta = self.tables.delta_matrix(policy_index, observation)
        posterior = self.tables.posterior(nu, policy_index, observation)
        bilevel_update(self.state, delta, posterior)
        check_simplex(self.state.rho, "rho")
        for k in range(self.state.num_infosets):
            check_simplex(self.state.q[:, k], "q")
        return not np.array_equal(old, self.state.rho)


def make_engine(name: EngineName, tables: DivergenceTables, T: int,
                config: Optional[EstimationConfig] = None) -> PosteriorEngine:
    if name == "bayes":
        return BayesEngine(tables)
    if name == "epoch":
        return EpochEngine(tables, T, config)
    if name == "bilevel":
        return BilevelEngine(tables)
    raise ValueError(f"unknown engine {name!r}")


def est_contribution(tables: DivergenceTables, p: np.ndarray, rho: np.ndarray, nu: np.ndarray,
                     model_index: int, infoset_index: int, mode: DivergenceMode) -> Tuple[float, float]:
    """单轮 Est 的两项（枚举观测精确计算）

    est_kl = Σ_π p(π) Σ_o M_t(o|π)[log ν_t(φ⋆|π,o) − log ρ_t(φ⋆)]
    est_div = Σ_π p(π) Σ_φ ρ_t(φ) D̄^π(φ‖M_t)
    """
    log_rho_star = _log(rho[infoset_index])
    est_kl = 0.0
    for i in np.flatnonzero(p > 0):
        lik = tables.likelihoods[i][model_index]
        weights = tables.membership @ (nu[:, None] * tables.world_likelihoods[i])   # (|Φ|, O)
        evidence = weights.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_post = np.log(weights[infoset_index] / evidence)
        terms = np.where(lik > 0, lik * (log_post - log_rho_star), 0.0)
        est_kl += p[i] * float(np.sum(terms))
    dbar = tables.model_dbar(mode)[:, :, model_index]      # (|Π|, |Φ|)
    est_div = float(p @ dbar @ rho)
    return est_kl, est_div


def est_diagnostic(tables: DivergenceTables, history: Sequence[Any], model_indices: Sequence[int],
                   infoset_index: int, mode: DivergenceMode) -> np.ndarray:
    """整条历史的逐轮 Est 贡献，形状 (T, 2)

    history 中每条记录需要 p_vector、rho、nu_vector 三个属性。
    """
    return np.array([
        est_contribution(tables, np.asarray(log.p_vector), np.asarray(log.rho), np.asarray(log.nu_vector),
                         m, infoset_index, mode)
        for log, m in zip(history, model_indices)
    ]).reshape(-1, 2)


def ledger_check(pseudo_regret: Sequence[float], air_values: Sequence[float], est_kl: Sequence[float],
                 est_div: Sequence[float], eta: float, gap_tolerance: float) -> Tuple[bool, float, float]:
    """Σ 伪遗憾 ≤ Σ AIR + (Σ est_kl + Σ est_div)/η + 3T·tol

    Returns:
        (是否成立, 左边, 右边)
    """
    T = len(pseudo_regret)
    lhs = float(np.sum(pseudo_regret))
    rhs = float(np.sum(air_values) + (np.sum(est_kl) + np.sum(est_div)) / eta + 3 * T * gap_tolerance)
    return lhs <= rhs, lhs, rhs
