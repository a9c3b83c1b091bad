#!/usr/bin/env python3
"""
信息集划分
按 Q⋆ 表（随机设定）或按策略与基函数价值表（混合设定）把模型-策略对划分为信息集
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from typing_extensions import Literal

from src.environments import (
    Environment,
    Policy,
    QTable,
    TabularMDP,
    backward_induction,
    compose_hybrid_model,
    find_policy,
    hybrid_model_id,
    q_star,
)
from src.errors import Assumption3Violated, ConfigError, PolicyNotInClass

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DEFAULT_GROUPING_TOL = 1e-8

Setting = Literal["stochastic", "hybrid"]


class WorldPoint(NamedTuple):
    """Ψ 中的一个点 (M, π⋆)"""
    model_id: str
    policy_id: str

    @property
    def point_id(self) -> str:
        return f"{self.model_id}|{self.policy_id}"


@dataclass(frozen=True, eq=False)
class Infoset:
    """信息集 φ：唯一的策略 π_φ 和价值表 f_φ"""
    infoset_id: str
    policy: Policy
    members: Tuple[str, ...]
    q_table: Optional[QTable] = None
    # 混合设定：basis_q_tables[j] 为奖励取第 j 个特征时 π_φ 下的 Q 表
    basis_q_tables: Optional[Tuple[QTable, ...]] = None
    reward_values: Dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        """V_φ(π_φ) = f_φ(s_1)（随机设定）"""
        if self.q_table is None:
            raise ValueError(f"infoset {self.infoset_id} has no single value table")
        s1 = self.q_table.index.layers[0][0]
        return self.q_table.state_value(0, s1)

    def value_under(self, reward_id: Optional[str] = None) -> float:
        """V_φ(π_φ) 或混合设定下的 V_{φ,R}"""
        if reward_id is None or self.q_table is not None:
            return self.value
        return self.reward_values[reward_id]

    def state_value(self, h: int, s: Optional[str]) -> np.ndarray:
        """f_φ(s) 向量：随机设定长度 1，混合设定长度 d"""
        if self.q_table is not None:
            return np.array([self.q_table.state_value(h, s)])
        return np.array([t.state_value(h, s, self.policy) for t in self.basis_q_tables])

    def sa_value(self, h: int, s: str, a: int) -> np.ndarray:
        """f_φ(s, a) 向量"""
        if self.q_table is not None:
            return np.array([self.q_table.q(h, s, a)])
        return np.array([t.q(h, s, a) for t in self.basis_q_tables])

    def tables(self) -> Tuple[QTable, ...]:
        return (self.q_table,) if self.q_table is not None else tuple(self.basis_q_tables)


@dataclass(eq=False)
class InfosetPartition:
    """Φ：互不相交的信息集，以及 Ψ 到所属信息集的映射"""
    setting: Setting
    environment: Environment
    infosets: Tuple[Infoset, ...]
    world_points: Tuple[WorldPoint, ...]
    owner: Tuple[int, ...]
    thetas: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.infosets = tuple(self.infosets)
        self.world_points = tuple(self.world_points)
        self.owner = tuple(int(i) for i in self.owner)
        self.check()
        self._world_index = {w.point_id: i for i, w in enumerate(self.world_points)}
        self._infoset_index = {phi.infoset_id: i for i, phi in enumerate(self.infosets)}

    def check(self):
        """结构检查：不相交、每个信息集一个策略、Ψ 被覆盖"""
        if len(self.owner) != len(self.world_points):
            raise ConfigError("every world point needs exactly one owning infoset")
        ids = [w.point_id for w in self.world_points]
        if len(set(ids)) != len(ids):
            raise ConfigError("infosets are not disjoint: repeated world point")
        if len({phi.infoset_id for phi in self.infosets}) != len(self.infosets):
            raise ConfigError("duplicate infoset ids")
        covered = set()
        for w, k in zip(self.world_points, self.owner):
            if not 0 <= k < len(self.infosets):
                raise ConfigError(f"world point {w.point_id} points at a missing infoset")
            if w.policy_id != self.infosets[k].policy.policy_id:
                raise ConfigError(f"world point {w.point_id} does not carry the policy of its infoset")
            covered.add(k)
        if covered != set(range(len(self.infosets))):
            raise ConfigError("some infoset owns no world point")

    @property
    def num_infosets(self) -> int:
        return len(self.infosets)

    @property
    def num_world_points(self) -> int:
        return len(self.world_points)

    def infoset_index(self, infoset_id: str) -> int:
        return self._infoset_index[infoset_id]

    def world_index(self, point_id: str) -> int:
        return self._world_index[point_id]

    def members_of(self, k: int) -> List[int]:
        return [i for i, owner in enumerate(self.owner) if owner == k]

    def membership_matrix(self) -> np.ndarray:
        """(|Φ|, |Ψ|) 的 0/1 矩阵"""
        m = np.zeros((self.num_infosets, self.num_world_points))
        m[list(self.owner), range(self.num_world_points)] = 1.0
        return m

    def infoset_of_model(self, model_id: str) -> int:
        """随机设定：包含模型 M 的信息集（即 φ⋆）"""
        for w, k in zip(self.world_points, self.owner):
            if w.model_id == model_id:
                return k
        raise KeyError(model_id)

    def infoset_for(self, transition_id: str, policy_id: str) -> int:
        """混合设定：包含 (P, π) 的信息集"""
        for k, phi in enumerate(self.infosets):
            if phi.policy.policy_id == policy_id and transition_id in phi.members:
                return k
        raise KeyError((transition_id, policy_id))

    def reward_id_of(self, model_id: str) -> Optional[str]:
        if self.setting != "hybrid":
            return None
        return model_id.split("+", 1)[1]


def build_partition_stochastic(env: Environment, tol: float = DEFAULT_GROUPING_TOL) -> InfosetPartition:
    """按 Q⋆ 表分组模型，每组的策略为 f_φ 的贪心策略

    Raises:
        PolicyNotInClass: 某组的贪心策略不在策略类中
    """
    groups: List[Tuple[QTable, List[str]]] = []
    for model in env.models:
        table = q_star(model)
        for rep, members in groups:
            if rep.max_abs_diff(table) <= tol:
                members.append(model.model_id)
                break
        else:
            groups.append((table, [model.model_id]))

    infosets, world_points, owner = [], [], []
    for k, (table, members) in enumerate(groups):
        policy = find_policy(env, table.greedy_choices())
        if policy is None:
            raise PolicyNotInClass(f"greedy policy of {members[0]} is not in the policy class")
        infosets.append(Infoset(infoset_id=f"phi{k + 1}", policy=policy, members=tuple(members), q_table=table))
        for model_id in members:
            world_points.append(WorldPoint(model_id, policy.policy_id))
            owner.append(k)

    logger.info(f"随机划分完成: {len(env.models)} 个模型 → {len(infosets)} 个信息集")
    return InfosetPartition("stochastic", env, tuple(infosets), tuple(world_points), tuple(owner))


def _basis_tables(model: TabularMDP, policy: Policy, env: Environment) -> Tuple[QTable, ...]:
    fmap = env.feature_map
    return tuple(
        backward_induction(model, policy, reward_fn=lambda h, s, a, j=j: float(fmap.feature(h, s, a)[j]))
        for j in range(fmap.dim)
    )


def _mixing_reward(env: Environment):
    """逐层变化的非基奖励，用于检查同组成员的 Q^π 是否一致"""
    fmap = env.feature_map
    weights = np.array([[1.0 / (h + j + 2) + 0.5 * h for j in range(fmap.dim)] for h in range(env.horizon)])
    return lambda h, s, a: float(fmap.feature(h, s, a) @ weights[h])


def build_partition_hybrid(env: Environment, tol: float = DEFAULT_GROUPING_TOL) -> InfosetPartition:
    """先按策略、再按 d 个基函数价值表分组转移；每个信息集 = (π, 转移组) × 全部奖励

    Raises:
        Assumption3Violated: 同组两个转移在非基奖励下的 Q^{π_φ} 不一致
    """
    if env.feature_map is None or not env.transitions or not env.reward_class:
        raise ConfigError(f"hybrid environment {env.name} needs features, transitions and rewards")
    thetas = env.feature_map.validate(env.reward_class, env.horizon)
    carriers = {P.transition_id: compose_hybrid_model(P, env.reward_class[0]) for P in env.transitions}
    mixing = _mixing_reward(env)

    infosets, world_points, owner = [], [], []
    for policy in env.policies:
        groups: List[Tuple[Tuple[QTable, ...], List[str]]] = []
        for P in env.transitions:
            tables = _basis_tables(carriers[P.transition_id], policy, env)
            for rep, members in groups:
                if all(a.max_abs_diff(b) <= tol for a, b in zip(rep, tables)):
                    members.append(P.transition_id)
                    break
            else:
                groups.append((tables, [P.transition_id]))

        for tables, members in groups:
            if len(members) >= 2:
                q_first = backward_induction(carriers[members[0]], policy, reward_fn=mixing)
                q_second = backward_induction(carriers[members[1]], policy, reward_fn=mixing)
                gap = q_first.max_abs_diff(q_second)
                if gap > tol:
                    raise Assumption3Violated(
                        f"transitions {members[0]} and {members[1]} share basis tables under {policy.policy_id} "
                        f"but their Q values differ by {gap:.3g}")
            k = len(infosets)
            rep_model = carriers[members[0]]
            reward_values = {}
            s1 = env.initial_state
            for R in env.reward_class:
                q = backward_induction(rep_model, policy, reward_fn=R)
                reward_values[R.reward_id] = q.q(0, s1, policy.act(s1))
            infosets.append(Infoset(
                infoset_id=f"phi{k + 1}",
                policy=policy,
                members=tuple(members),
                basis_q_tables=tables,
                reward_values=reward_values,
            ))
            for transition_id in members:
                for R in env.reward_class:
                    world_points.append(WorldPoint(hybrid_model_id(transition_id, R.reward_id), policy.policy_id))
                    owner.append(k)

    logger.info(f"混合划分完成: {len(env.policies)} 个策略 × {len(env.transitions)} 个转移 → {len(infosets)} 个信息集")
    return InfosetPartition("hybrid", env, tuple(infosets), tuple(world_points), tuple(owner), thetas)


def build_partition(env: Environment, tol: float = DEFAULT_GROUPING_TOL) -> InfosetPartition:
    if env.kind == "hybrid_mdp":
        return build_partition_hybrid(env, tol)
    return build_partition_stochastic(env, tol)
