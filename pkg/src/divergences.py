#!/usr/bin/env python3
"""
散度原语
KL、信息集后验、Bellman像、平均/平方估计误差散度、组合散度 D 及其 Bregman 形式
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from typing_extensions import Literal

from src.distribution import DiscreteDistribution
from src.environments import (
    BanditModel,
    Model,
    Observation,
    Policy,
    Step,
    enumerate_observations,
    observation_likelihood,
    observation_steps,
    value,
)
from src.errors import INFINITE_KL, InfiniteKL, NotComplete, ZeroEvidence, is_infinite
from src.partition import DEFAULT_GROUPING_TOL, Infoset, InfosetPartition

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DivergenceMode = Literal["av", "sq", "none"]
DIVERGENCE_MODES = ("av", "sq", "none")
DUAL_FORM_TOL = 1e-9

KLValue = Union[float, InfiniteKL]


def kl(p: DiscreteDistribution, q: DiscreteDistribution) -> KLValue:
    """KL(p, q) = Σ p log(p/q)，0·log(0/·) = 0

    Returns:
        非负实数；p(x) > 0 而 q(x) = 0 时返回 INFINITE_KL
    """
    total = 0.0
    for x, px in zip(p.support, p.probs):
        if px <= 0:
            continue
        qx = q.prob(x)
        if qx <= 0:
            return INFINITE_KL
        total += px * math.log(px / qx)
    return max(total, 0.0)


def kl_arrays(p: np.ndarray, q: np.ndarray) -> KLValue:
    """同一支撑上两个概率向量的 KL"""
    mask = p > 0
    if np.any(q[mask] <= 0):
        return INFINITE_KL
    return max(float(np.sum(p[mask] * np.log(p[mask] / q[mask]))), 0.0)


def posterior_infoset(nu: DiscreteDistribution, policy: Policy, observation: Observation,
                      partition: InfosetPartition) -> DiscreteDistribution:
    """ν(φ|π,o) ∝ Σ_{(M,π⋆)∈φ} ν(M,π⋆) M(o|π)

    Raises:
        ZeroEvidence: 观测在所有 ν 有质量的模型下概率为 0
    """
    env = partition.environment
    weights = np.zeros(partition.num_infosets)
    for point, k in zip(partition.world_points, partition.owner):
        mass = nu.prob(point.point_id)
        if mass > 0:
            weights[k] += mass * observation_likelihood(env.model(point.model_id), policy, observation)
    evidence = weights.sum()
    if evidence <= 0:
        raise ZeroEvidence(f"observation {observation!r} has zero likelihood under every supported model")
    return DiscreteDistribution(tuple(phi.infoset_id for phi in partition.infosets), weights / evidence)


def _backup_tables(model: Model, infoset: Infoset, partition: InfosetPartition) -> List[np.ndarray]:
    """T_M φ 的价值表（随机设定一个，混合设定 d 个）"""
    env = partition.environment
    index = infoset.tables()[0].index
    hybrid = partition.setting == "hybrid"
    dim = len(infoset.tables())
    out = [np.zeros(len(index)) for _ in range(dim)]
    for i, (h, s, a) in enumerate(index.keys):
        if hybrid:
            target = env.feature_map.feature(h, s, a)
        else:
            target = np.array([model.mean_reward(h, s, a)])
        cont = np.zeros(dim)
        row = model.transition_law(h, s, a)
        if row is not None:
            for s_next, q in zip(row.support, row.probs):
                if q > 0:
                    cont += q * infoset.state_value(h + 1, s_next)
        for j in range(dim):
            out[j][i] = target[j] + cont[j]
    return out


def bellman_image(model: Model, infoset: Infoset, partition: InfosetPartition,
                  tol: float = DEFAULT_GROUPING_TOL) -> Infoset:
    """T_M φ：价值表与 Bellman 备份一致的唯一信息集

    随机设定 f_{φ'}(s,a) = R(s,a) + E_{s'}[f_φ(s')]；混合设定要求 π_{φ'} = π_φ 且 d 个基函数表都匹配。

    Raises:
        NotComplete: 划分中没有匹配的信息集
    """
    backup = _backup_tables(model, infoset, partition)
    hybrid = partition.setting == "hybrid"
    for candidate in partition.infosets:
        if hybrid and candidate.policy.policy_id != infoset.policy.policy_id:
            continue
        tables = candidate.tables()
        if all(float(np.max(np.abs(t.values - b))) <= tol for t, b in zip(tables, backup)):
            return candidate
    raise NotComplete(f"no infoset matches T_M φ for M={model.model_id}, φ={infoset.infoset_id}")


@dataclass(frozen=True, eq=False)
class EstimationFunctionSpec:
    """估计函数 ℓ_h 与 ξ_h

    stochastic_td: ℓ_h = f_φ(s_h,a_h) − r_h − f_φ(s_{h+1})，N = 1
    hybrid_basis_td: ℓ_h,j = f_φ(s_h,a_h;e_j) − φ_j(s_h,a_h) − f_φ(s_{h+1};e_j)，N = d
    """
    kind: Literal["stochastic_td", "hybrid_basis_td"]
    n_components: int
    bound: float                    # D̄_av 与分段损失用的 B
    bound_sq: float                 # D̄_sq 与 Δ_t 用的 B，混合设定 B² = d
    partition: InfosetPartition = field(repr=False)
    ell_sup: float = 0.0            # 枚举到的 max |ℓ|，仅作诊断

    @classmethod
    def for_partition(cls, partition: InfosetPartition) -> "EstimationFunctionSpec":
        """从划分构造；B 取理论值，同时记录全部 (φ', φ, s, a, r, s') 组合上的 max |ℓ|"""
        env = partition.environment
        hybrid = partition.setting == "hybrid"
        index = partition.infosets[0].tables()[0].index
        sup = 0.0
        sa_cache = {}
        for phi in partition.infosets:
            for h, s, a in index.keys:
                sa_cache[(phi.infoset_id, h, s, a)] = phi.sa_value(h, s, a)
        for h, s, a in index.keys:
            targets = [env.feature_map.feature(h, s, a)] if hybrid else [np.array([r]) for r in env.union_rewards(h, s, a)]
            nexts = list(env.union_next_states(h, s, a)) or [None]
            for phi in partition.infosets:
                for s_next in nexts:
                    f_next = phi.state_value(h + 1, s_next)
                    for prime in partition.infosets:
                        f_sa = sa_cache[(prime.infoset_id, h, s, a)]
                        for target in targets:
                            sup = max(sup, float(np.max(np.abs(f_sa - target - f_next))))
        if hybrid:
            d = env.feature_map.dim
            spec = cls("hybrid_basis_td", d, 1.0, math.sqrt(d), partition, sup)
        else:
            spec = cls("stochastic_td", 1, 1.0, 1.0, partition, sup)
        logger.info(f"估计函数: kind={spec.kind}, N={spec.n_components}, B_av={spec.bound:.6g}, "
                    f"B_sq={spec.bound_sq:.6g}, max|ℓ|={sup:.6g}")
        return spec

    @property
    def horizon(self) -> int:
        return self.partition.environment.horizon

    @property
    def normalizer(self) -> float:
        """D̄_av 的 1/(B²H)"""
        return 1.0 / (self.bound ** 2 * self.horizon)

    @property
    def normalizer_sq(self) -> float:
        """D̄_sq 的 1/(B²H)"""
        return 1.0 / (self.bound_sq ** 2 * self.horizon)

    @property
    def ordering_scale(self) -> float:
        """d_av ≤ ordering_scale · d_sq（混合设定为 d，随机设定为 1）"""
        return (self.bound_sq / self.bound) ** 2

    def _target(self, step: Step) -> np.ndarray:
        if self.kind == "hybrid_basis_td":
            return self.partition.environment.feature_map.feature(step.h, step.state, step.action)
        return np.array([step.reward])

    def ell(self, infoset: Infoset, policy: Policy, observation: Observation) -> np.ndarray:
        """ℓ_h(φ; o_h)，形状 (H, N)"""
        out = np.zeros((self.horizon, self.n_components))
        for step in observation_steps(policy, observation):
            out[step.h] = (infoset.sa_value(step.h, step.state, step.action) - self._target(step)
                           - infoset.state_value(step.h + 1, step.next_state))
        return out

    def xi(self, prime: Infoset, infoset: Infoset, policy: Policy, observation: Observation) -> np.ndarray:
        """ξ_h(φ', φ; o_h) = ‖f_φ'(s_h,a_h) − target − f_φ(s_{h+1})‖²，形状 (H,)"""
        out = np.zeros(self.horizon)
        for step in observation_steps(policy, observation):
            diff = (prime.sa_value(step.h, step.state, step.action) - self._target(step)
                    - infoset.state_value(step.h + 1, step.next_state))
            out[step.h] = float(np.sum(diff ** 2))
        return out

    def sa_values(self, infoset: Infoset, policy: Policy, observation: Observation) -> np.ndarray:
        """f_φ(s_h, a_h) 沿观测的取值，形状 (H, N)"""
        out = np.zeros((self.horizon, self.n_components))
        for step in observation_steps(policy, observation):
            out[step.h] = infoset.sa_value(step.h, step.state, step.action)
        return out


def _enumerated(model: Model, policy: Policy, spec: EstimationFunctionSpec):
    env = spec.partition.environment
    for obs in enumerate_observations(env, policy):
        lik = observation_likelihood(model, policy, obs)
        if lik > 0:
            yield obs, lik


def d_av(infoset: Infoset, model: Model, policy: Policy, spec: EstimationFunctionSpec) -> float:
    """D̄_av^π(φ‖M) = max_j (1/(B²H)) Σ_h (E^{π,M}[ℓ_h(φ; o_h)_j])²"""
    mean_ell = np.zeros((spec.horizon, spec.n_components))
    for obs, lik in _enumerated(model, policy, spec):
        mean_ell += lik * spec.ell(infoset, policy, obs)
    return float(np.max(np.sum(mean_ell ** 2, axis=0))) * spec.normalizer


def d_sq_forms(infoset: Infoset, model: Model, policy: Policy, spec: EstimationFunctionSpec) -> Tuple[float, float]:
    """D̄_sq 的两种计算：ξ 差的期望，以及 f_φ 与 f_{T_Mφ} 平方差的期望"""
    image = bellman_image(model, infoset, spec.partition)
    xi_form = 0.0
    gap_form = 0.0
    for obs, lik in _enumerated(model, policy, spec):
        xi_form += lik * float(np.sum(spec.xi(infoset, infoset, policy, obs) - spec.xi(image, infoset, policy, obs)))
        gap = spec.sa_values(infoset, policy, obs) - spec.sa_values(image, policy, obs)
        gap_form += lik * float(np.sum(gap ** 2))
    return xi_form * spec.normalizer_sq, gap_form * spec.normalizer_sq


def d_sq(infoset: Infoset, model: Model, policy: Policy, spec: EstimationFunctionSpec) -> float:
    """D̄_sq^π(φ‖M) = (1/(B²H)) Σ_h E^{π,M}[ξ_h(φ,φ;o_h) − ξ_h(T_Mφ,φ;o_h)]

    Raises:
        NotComplete: T_M φ 不存在
    """
    xi_form, gap_form = d_sq_forms(infoset, model, policy, spec)
    if abs(xi_form - gap_form) > DUAL_FORM_TOL:
        logger.warning(f"d_sq 两种形式不一致: {xi_form!r} vs {gap_form!r} "
                       f"(φ={infoset.infoset_id}, M={model.model_id}, π={policy.policy_id})")
    return max(xi_form, 0.0)


def model_divergence(infoset: Infoset, model: Model, policy: Policy, spec: Optional[EstimationFunctionSpec],
                     mode: DivergenceMode) -> float:
    """按模式选择 D̄"""
    if mode == "none":
        return 0.0
    if mode == "av":
        return d_av(infoset, model, policy, spec)
    if mode == "sq":
        return d_sq(infoset, model, policy, spec)
    raise ValueError(f"unknown divergence mode {mode!r}")


def combined_divergence(nu: DiscreteDistribution, rho: DiscreteDistribution, policy: Policy,
                        partition: InfosetPartition, spec: Optional[EstimationFunctionSpec] = None,
                        mode: DivergenceMode = "none") -> KLValue:
    """D^π(ν‖ρ) = E_{M∼ν} E_{o∼M(·|π)}[KL(ν_φ(·|π,o), ρ) + E_{φ∼ρ} D̄^π(φ‖M)]

    Returns:
        非负实数，ρ 在某个后验为正的信息集上为 0 时返回 INFINITE_KL
    """
    env = partition.environment
    total = 0.0
    observations = enumerate_observations(env, policy)
    for point in partition.world_points:
        mass = nu.prob(point.point_id)
        if mass <= 0:
            continue
        model = env.model(point.model_id)
        for obs in observations:
            lik = observation_likelihood(model, policy, obs)
            if lik <= 0:
                continue
            post = posterior_infoset(nu, policy, obs, partition)
            term = kl(post, rho)
            if is_infinite(term):
                return INFINITE_KL
            total += mass * lik * term
        if mode != "none":
            total += mass * sum(
                rho.prob(phi.infoset_id) * model_divergence(phi, model, policy, spec, mode)
                for phi in partition.infosets if rho.prob(phi.infoset_id) > 0)
    return total


def bregman_of_D(nu: DiscreteDistribution, nu_prime: DiscreteDistribution, rho: DiscreteDistribution,
                 policy: Policy, partition: InfosetPartition) -> KLValue:
    """Breg_{D^π(·‖ρ)}(ν, ν') = E_{M∼ν} E_{o∼M(·|π)}[KL(ν_φ(·|π,o), ν'_φ(·|π,o))]

    ρ 和 D̄ 项对 ν 是线性的，不出现在结果中。
    """
    env = partition.environment
    total = 0.0
    observations = enumerate_observations(env, policy)
    for point in partition.world_points:
        mass = nu.prob(point.point_id)
        if mass <= 0:
            continue
        model = env.model(point.model_id)
        for obs in observations:
            lik = observation_likelihood(model, policy, obs)
            if lik <= 0:
                continue
            post = posterior_infoset(nu, policy, obs, partition)
            try:
                post_prime = posterior_infoset(nu_prime, policy, obs, partition)
            except ZeroEvidence:
                return INFINITE_KL
            term = kl(post, post_prime)
            if is_infinite(term):
                return INFINITE_KL
            total += mass * lik * term
    return total


class DivergenceTables:
    """按策略预计算的似然矩阵、价值和 D̄ 矩阵

    所有 AIR 求值和后验更新都只做 numpy 运算；语义与上面逐项的函数一致。
    """

    def __init__(self, partition: InfosetPartition, spec: Optional[EstimationFunctionSpec] = None):
        self.partition = partition
        self.env = partition.environment
        self.spec = spec or EstimationFunctionSpec.for_partition(partition)
        self.policies: Tuple[Policy, ...] = self.env.policies
        self.membership = partition.membership_matrix()
        self.owner = np.array(partition.owner)
        self.world_models = [self.env.model(w.model_id) for w in partition.world_points]
        self.model_ids = [m.model_id for m in self.env.models]
        self.world_model_index = np.array([self.env.model_index(w.model_id) for w in partition.world_points])

        self.observations: List[List[Observation]] = []
        self._obs_index: List[Dict[Observation, int]] = []
        self.likelihoods: List[np.ndarray] = []        # (|M|, |O_π|)
        self.world_likelihoods: List[np.ndarray] = []  # (|Ψ|, |O_π|)
        self.log_world_likelihoods: List[np.ndarray] = []
        self.ell: List[np.ndarray] = []                # (|O_π|, |Φ|, H, N)
        self.sa: List[np.ndarray] = []                 # (|O_π|, |Φ|, H, N)
        for policy in self.policies:
            obs = enumerate_observations(self.env, policy)
            self.observations.append(obs)
            self._obs_index.append({o: j for j, o in enumerate(obs)})
            lik = np.array([[observation_likelihood(m, policy, o) for o in obs] for m in self.env.models])
            self.likelihoods.append(lik)
            self.world_likelihoods.append(lik[self.world_model_index])
            with np.errstate(divide="ignore"):
                self.log_world_likelihoods.append(np.log(lik[self.world_model_index]))
            self.ell.append(np.array([[self.spec.ell(phi, policy, o) for phi in partition.infosets] for o in obs]))
            self.sa.append(np.array([[self.spec.sa_values(phi, policy, o) for phi in partition.infosets] for o in obs]))

        values = np.array([[value(m, p) for m in self.env.models] for p in self.policies])  # (|Π|, |M|)
        self.model_values = values
        self.v_pol = values[:, self.world_model_index]                                     # (|Π|, |Ψ|)
        star_policy = [self.env.policy_index(w.policy_id) for w in partition.world_points]
        self.v_star = values[star_policy, self.world_model_index]                          # (|Ψ|,)
        self.v_infoset = np.array([
            [phi.value_under(partition.reward_id_of(w.model_id)) for w in partition.world_points]
            for phi in partition.infosets
        ])                                                                                 # (|Φ|, |Ψ|)
        self._dbar: Dict[str, np.ndarray] = {}
        self._images: Optional[np.ndarray] = None
        self._delta_cache: Dict[Tuple[int, int], np.ndarray] = {}
        logger.info(f"散度表就绪: |Π|={len(self.policies)}, |Ψ|={partition.num_world_points}, "
                    f"|Φ|={partition.num_infosets}, 最大观测数={max(len(o) for o in self.observations)}")

    @property
    def num_policies(self) -> int:
        return len(self.policies)

    @property
    def num_world_points(self) -> int:
        return self.partition.num_world_points

    @property
    def num_infosets(self) -> int:
        return self.partition.num_infosets

    def obs_column(self, policy_index: int, observation: Observation) -> int:
        try:
            return self._obs_index[policy_index][observation]
        except KeyError:
            for j, o in enumerate(self.observations[policy_index]):
                if _same_observation(o, observation):
                    return j
            raise

    def bellman_images(self) -> np.ndarray:
        """(|M|, |Φ|) 的 T_M φ 下标"""
        if self._images is None:
            images = np.zeros((len(self.env.models), self.num_infosets), dtype=int)
            index = {phi.infoset_id: k for k, phi in enumerate(self.partition.infosets)}
            for m_idx, model in enumerate(self.env.models):
                for k, phi in enumerate(self.partition.infosets):
                    images[m_idx, k] = index[bellman_image(model, phi, self.partition).infoset_id]
            self._images = images
        return self._images

    def dbar(self, mode: DivergenceMode) -> np.ndarray:
        """(|Π|, |Φ|, |Ψ|) 的 D̄^π(φ‖M_ψ)"""
        return self.model_dbar(mode)[:, :, self.world_model_index]

    def model_dbar(self, mode: DivergenceMode) -> np.ndarray:
        """(|Π|, |Φ|, |M|) 的 D̄^π(φ‖M)，按模式缓存"""
        if mode not in self._dbar:
            self._dbar[mode] = self._compute_dbar(mode)
        return self._dbar[mode]

    def _compute_dbar(self, mode: DivergenceMode) -> np.ndarray:
        n_models = len(self.env.models)
        out = np.zeros((self.num_policies, self.num_infosets, n_models))
        if mode == "none":
            return out
        norm = self.spec.normalizer_sq if mode == "sq" else self.spec.normalizer
        images = self.bellman_images() if mode == "sq" else None
        for i in range(self.num_policies):
            lik = self.likelihoods[i]                  # (|M|, O)
            ell = self.ell[i]                          # (O, Φ, H, N)
            if mode == "av":
                mean_ell = np.einsum("mo,ofhn->mfhn", lik, ell)
                out[i] = np.max(np.sum(mean_ell ** 2, axis=2), axis=-1).T * norm
            elif mode == "sq":
                sa = self.sa[i]
                for m_idx in range(n_models):
                    gap = sa - sa[:, images[m_idx]]    # (O, Φ, H, N)
                    out[i, :, m_idx] = np.einsum("o,of->f", lik[m_idx], np.sum(gap ** 2, axis=(2, 3))) * norm
            else:
                raise ValueError(f"unknown divergence mode {mode!r}")
        return out

    def posterior(self, nu: np.ndarray, policy_index: int, observation: Observation) -> np.ndarray:
        """ν_φ(·|π,o) 的向量形式"""
        col = self.obs_column(policy_index, observation)
        weights = self.membership @ (nu * self.world_likelihoods[policy_index][:, col])
        evidence = weights.sum()
        if evidence <= 0:
            raise ZeroEvidence(f"observation {observation!r} has zero likelihood under every supported model")
        return weights / evidence

    def ell_matrix(self, policy_index: int, observation: Observation) -> np.ndarray:
        """(|Φ|, H, N) 的 ℓ_h(φ; o)"""
        return self.ell[policy_index][self.obs_column(policy_index, observation)]

    def delta_matrix(self, policy_index: int, observation: Observation) -> np.ndarray:
        """Δ(φ', φ) = (1/(B²H)) Σ_h ξ_h(φ', φ, o_h)，行为 φ'，列为 φ"""
        col = self.obs_column(policy_index, observation)
        key = (policy_index, col)
        if key not in self._delta_cache:
            ell = self.ell[policy_index][col]          # (Φ, H, N)
            sa = self.sa[policy_index][col]            # (Φ, H, N)
            diff = ell[None, :, :, :] + sa[:, None, :, :] - sa[None, :, :, :]
            self._delta_cache[key] = np.sum(diff ** 2, axis=(2, 3)) * self.spec.normalizer_sq
        return self._delta_cache[key]

    def dual_form_gap(self) -> float:
        """d_sq 两种形式在全部 (π, φ, M) 上的最大差"""
        images = self.bellman_images()
        worst = 0.0
        for i in range(self.num_policies):
            lik, ell, sa = self.likelihoods[i], self.ell[i], self.sa[i]
            for m_idx in range(len(self.env.models)):
                img = images[m_idx]
                xi_same = np.sum(ell ** 2, axis=(2, 3))
                xi_img = np.sum((ell + sa[:, img] - sa) ** 2, axis=(2, 3))
                xi_form = lik[m_idx] @ (xi_same - xi_img)
                gap_form = lik[m_idx] @ np.sum((sa - sa[:, img]) ** 2, axis=(2, 3))
                worst = max(worst, float(np.max(np.abs(xi_form - gap_form))) * self.spec.normalizer_sq)
        return worst


def _same_observation(a: Observation, b: Observation) -> bool:
    if isinstance(a, tuple) != isinstance(b, tuple):
        return False
    if not isinstance(a, tuple):
        return abs(float(a) - float(b)) <= 1e-12
    return len(a) == len(b) and all(
        x[0] == y[0] and x[1] == y[1] and abs(float(x[2]) - float(y[2])) <= 1e-12 for x, y in zip(a, b))
