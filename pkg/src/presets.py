#!/usr/bin/env python3
"""
内置实例
三臂分离实例、伯努利老虎机、两层表格MDP（完备/不完备）和混合MDP
"""

import logging
import math
from typing import Dict, Optional, Sequence, Tuple

from src.distribution import DiscreteDistribution
from src.environments import (
    AlternatingAdversary,
    BanditModel,
    Environment,
    FeatureMap,
    RewardFunction,
    TabularMDP,
    TransitionKernel,
    compose_hybrid_model,
    enumerate_arm_policies,
    enumerate_policies,
)

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

LAYERS = (("s1",), ("x", "y", "z"))
ACTIONS = (0, 1)

# 第二层奖励取 1/2 的概率，按 (状态, (a0, a1)) 给出
REWARD_CONFIG_A = {"x": (0.9, 0.3), "y": (0.6, 0.2), "z": (0.1, 0.3)}
REWARD_CONFIG_B = {"x": (0.3, 0.9), "y": (0.2, 0.6), "z": (0.3, 0.1)}
# 最大值与 A 不同，使 Bellman 像落在划分之外
REWARD_CONFIG_B_SHIFTED = {"x": (0.3, 0.7), "y": (0.2, 0.6), "z": (0.5, 0.1)}
FIRST_LAYER_REWARD = (0.4, 0.5)

TRANSITIONS = {
    "Pa": {0: {"x": 0.5, "y": 0.5, "z": 0.0}, 1: {"x": 0.0, "y": 0.5, "z": 0.5}},
    "Pb": {0: {"x": 0.0, "y": 0.5, "z": 0.5}, 1: {"x": 0.5, "y": 0.5, "z": 0.0}},
}

HYBRID_FEATURES = {
    (0, "s1", 0): (0.5, 0.0), (0, "s1", 1): (0.0, 0.5),
    (1, "x", 0): (0.5, 0.0), (1, "x", 1): (0.0, 0.5),
    (1, "y", 0): (0.25, 0.25), (1, "y", 1): (0.5, 0.0),
    (1, "z", 0): (0.0, 0.5), (1, "z", 1): (0.25, 0.0),
}
HYBRID_THETAS = {"R1": (1.0, 0.0), "R2": (0.0, 1.0)}


def toy_gap(T: int) -> float:
    """Δ = 1/(16√T)"""
    return 1.0 / (16.0 * math.sqrt(T))


def _bernoulli(p: float, high: float = 1.0) -> DiscreteDistribution:
    return DiscreteDistribution((0.0, high), (1.0 - p, p))


def make_toy_bandit(T: int = 1024, epsilon_ratio: float = 0.5, true_model: str = "M1") -> Environment:
    """三臂分离实例

    M1 = (Ber(p⁻), Ber(p⁺), 以 1/2 概率取 0 或 ε)，M2 = (Ber(p⁺), Ber(p⁻), 确定取 ε/2)，
    p± = 1/2 ± Δ，Δ = 1/(16√T)，ε = epsilon_ratio·Δ。第三个臂的观测能区分两个模型。
    """
    if not 0 < epsilon_ratio < 1:
        raise ValueError(f"epsilon_ratio must lie in (0, 1), got {epsilon_ratio}")
    gap = toy_gap(T)
    eps = epsilon_ratio * gap
    p_plus, p_minus = 0.5 + gap, 0.5 - gap
    support = tuple(sorted({0.0, 0.5 * eps, eps, 1.0}))
    m1 = BanditModel("M1", (
        _bernoulli(p_minus), _bernoulli(p_plus), DiscreteDistribution((0.0, eps), (0.5, 0.5))), support)
    m2 = BanditModel("M2", (
        _bernoulli(p_plus), _bernoulli(p_minus), DiscreteDistribution.point_mass(0.5 * eps)), support)
    logger.info(f"分离实例: T={T}, Δ={gap:.6g}, ε={eps:.6g}")
    return Environment(
        name="toy_separation",
        kind="bandit",
        models=(m1, m2),
        policies=enumerate_arm_policies(3),
        true_model_id=true_model,
    )


def make_bernoulli_bandit(means: Sequence[Sequence[float]], true_model: int = 0,
                          name: str = "bernoulli_bandit") -> Environment:
    """每个模型一行臂均值的伯努利老虎机"""
    models = tuple(
        BanditModel(f"M{k + 1}", tuple(_bernoulli(float(m)) for m in row), (0.0, 1.0))
        for k, row in enumerate(means)
    )
    return Environment(
        name=name,
        kind="bandit",
        models=models,
        policies=enumerate_arm_policies(len(means[0])),
        true_model_id=models[true_model].model_id,
    )


def _transition_rows(transition_id: str) -> Dict[Tuple[int, str, int], DiscreteDistribution]:
    spec = TRANSITIONS[transition_id]
    return {(0, "s1", a): DiscreteDistribution.from_dict(spec[a]) for a in ACTIONS}


def _layered_model(transition_id: str, config_id: str, config: Dict[str, Tuple[float, float]]) -> TabularMDP:
    rewards = {(0, "s1", a): _bernoulli(FIRST_LAYER_REWARD[a], 0.5) for a in ACTIONS}
    for s, probs in config.items():
        for a in ACTIONS:
            rewards[(1, s, a)] = _bernoulli(probs[a], 0.5)
    return TabularMDP(
        model_id=f"{transition_id}_{config_id}",
        layers=LAYERS,
        actions=ACTIONS,
        transitions=_transition_rows(transition_id),
        rewards=rewards,
    )


def make_layered_mdp(bellman_complete: bool = True, true_model: str = "Pa_A") -> Environment:
    """两层表格MDP：S_1 = {s1}，S_2 = {x, y, z}，|A| = 2，奖励为 {0, 1/2} 上的伯努利

    两个转移 × 两套第二层奖励共 4 个模型、16 个确定性策略。完备版本的两套奖励在每个状态上
    的最大值相同，因此 T_M φ 恰为 M 自己的信息集。
    """
    second = REWARD_CONFIG_B if bellman_complete else REWARD_CONFIG_B_SHIFTED
    models = tuple(
        _layered_model(P, cid, cfg)
        for P in ("Pa", "Pb")
        for cid, cfg in (("A", REWARD_CONFIG_A), ("B", second))
    )
    return Environment(
        name="layered_complete" if bellman_complete else "layered_incomplete",
        kind="stochastic_mdp",
        models=models,
        policies=enumerate_policies(LAYERS, ACTIONS),
        true_model_id=true_model,
    )


def hybrid_reward_class() -> Tuple[RewardFunction, ...]:
    return tuple(
        RewardFunction(rid, {key: float(theta[0] * f[0] + theta[1] * f[1]) for key, f in HYBRID_FEATURES.items()})
        for rid, theta in HYBRID_THETAS.items()
    )


def make_hybrid_mdp(true_transition: str = "Pa", schedule: Optional[Sequence[str]] = None) -> Environment:
    """混合MDP：与两层实例相同的转移类，d = 2 的已知特征，两个线性奖励由不经意对手轮流给出"""
    transitions = tuple(
        TransitionKernel(P, LAYERS, ACTIONS, _transition_rows(P)) for P in ("Pa", "Pb")
    )
    reward_class = hybrid_reward_class()
    models = tuple(compose_hybrid_model(P, R) for P in transitions for R in reward_class)
    return Environment(
        name="hybrid_alternating",
        kind="hybrid_mdp",
        models=models,
        policies=enumerate_policies(LAYERS, ACTIONS),
        feature_map=FeatureMap(2, HYBRID_FEATURES),
        transitions=transitions,
        reward_class=reward_class,
        true_transition_id=true_transition,
        adversary=AlternatingAdversary(tuple(schedule or ("R1", "R2"))),
    )


PRESETS = {
    "toy_separation": make_toy_bandit,
    "bernoulli_bandit": make_bernoulli_bandit,
    "layered_mdp": make_layered_mdp,
    "hybrid_mdp": make_hybrid_mdp,
}
