#!/usr/bin/env python3
"""
有限DMSO环境
多臂老虎机、分层表格MDP和对抗奖励的混合MDP，以及观测的精确枚举、似然、价值和抽样
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Dict, Hashable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from typing_extensions import Literal, Protocol

from src.distribution import DiscreteDistribution
from src.errors import CapExceeded, ConfigError, FeatureMapMismatch, InvalidDistribution, UnknownObservation

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

BANDIT_STATE = "s1"
DEFAULT_CAP = 50_000
RETURN_TOL = 1e-9
TIE_TOL = 1e-12

StateActionKey = Tuple[int, str, int]
EnvironmentKind = Literal["bandit", "stochastic_mdp", "hybrid_mdp"]


class Step(NamedTuple):
    """轨迹中的一步 (h, s_h, a_h, r_h, s_{h+1})，最后一层 next_state 为 None"""
    h: int
    state: str
    action: int
    reward: float
    next_state: Optional[str]


@dataclass(frozen=True)
class Policy:
    """确定性策略 π: S → A"""
    policy_id: str
    choices: Tuple[Tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple((str(s), int(a)) for s, a in self.choices))
        object.__setattr__(self, "_table", dict(self.choices))

    @classmethod
    def for_arm(cls, arm: int, policy_id: Optional[str] = None) -> "Policy":
        return cls(policy_id or f"a{arm + 1}", ((BANDIT_STATE, arm),))

    def act(self, state: str) -> int:
        return self._table[state]

    def covers(self, states: Sequence[str]) -> bool:
        return all(s in self._table for s in states)

    @property
    def arm(self) -> int:
        return self._table[BANDIT_STATE]


class StateActionIndex:
    """(h, s, a) 的规范顺序，Q表都按这个顺序存成向量"""

    def __init__(self, layers: Tuple[Tuple[str, ...], ...], actions: Tuple[int, ...]):
        self.layers = layers
        self.actions = actions
        self.keys: List[StateActionKey] = [
            (h, s, a) for h, layer in enumerate(layers) for s in layer for a in actions
        ]
        self.index: Dict[StateActionKey, int] = {k: i for i, k in enumerate(self.keys)}

    def __len__(self) -> int:
        return len(self.keys)

    def __call__(self, h: int, s: str, a: int) -> int:
        return self.index[(h, s, a)]


@lru_cache(maxsize=None)
def state_action_index(layers: Tuple[Tuple[str, ...], ...], actions: Tuple[int, ...]) -> StateActionIndex:
    return StateActionIndex(layers, actions)


@dataclass(frozen=True, eq=False)
class QTable:
    """按 StateActionIndex 存储的 Q 表"""
    index: StateActionIndex
    values: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.index.layers)

    def q(self, h: int, s: str, a: int) -> float:
        return float(self.values[self.index(h, s, a)])

    def state_value(self, h: int, s: Optional[str], policy: Optional[Policy] = None) -> float:
        """f(s) = max_a f(s,a)，给定策略时为 f(s, π(s))；越过最后一层为 0"""
        if h >= self.horizon or s is None:
            return 0.0
        if policy is not None:
            return self.q(h, s, policy.act(s))
        return max(self.q(h, s, a) for a in self.index.actions)

    def greedy_action(self, h: int, s: str) -> int:
        """贪心动作，平局取最小动作编号"""
        qs = [self.q(h, s, a) for a in self.index.actions]
        best = max(qs)
        for a, q in zip(self.index.actions, qs):
            if q >= best - TIE_TOL:
                return a
        return self.index.actions[0]

    def greedy_choices(self) -> Tuple[Tuple[str, int], ...]:
        return tuple((s, self.greedy_action(h, s)) for h, layer in enumerate(self.index.layers) for s in layer)

    def max_abs_diff(self, other: "QTable") -> float:
        return float(np.max(np.abs(self.values - other.values))) if len(self.values) else 0.0


@dataclass(frozen=True, eq=False)
class BanditModel:
    """多臂老虎机模型：每个臂一个共享支撑上的奖励分布"""
    model_id: str
    reward_laws: Tuple[DiscreteDistribution, ...]
    reward_support: Tuple[float, ...] = ()

    def __post_init__(self):
        laws = tuple(self.reward_laws)
        if not laws:
            raise InvalidDistribution(f"bandit {self.model_id} has no arms")
        support = tuple(self.reward_support) or tuple(sorted({float(r) for law in laws for r in law.support}))
        for law in laws:
            for r in law.support:
                if not 0.0 <= float(r) <= 1.0:
                    raise InvalidDistribution(f"reward {r} of {self.model_id} outside [0,1]")
                if float(r) not in support:
                    raise InvalidDistribution(f"reward {r} of {self.model_id} outside the shared support")
        object.__setattr__(self, "reward_laws", laws)
        object.__setattr__(self, "reward_support", support)

    @property
    def num_arms(self) -> int:
        return len(self.reward_laws)

    @property
    def layers(self) -> Tuple[Tuple[str, ...], ...]:
        return ((BANDIT_STATE,),)

    @property
    def actions(self) -> Tuple[int, ...]:
        return tuple(range(self.num_arms))

    @property
    def horizon(self) -> int:
        return 1

    def reward_law(self, h: int, s: str, a: int) -> DiscreteDistribution:
        return self.reward_laws[a]

    def transition_law(self, h: int, s: str, a: int) -> Optional[DiscreteDistribution]:
        return None

    def mean_reward(self, h: int, s: str, a: int) -> float:
        return self.reward_laws[a].mean()


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """分层表格MDP (S, A, P, R, H, s_1)

    transitions 和 rewards 以 (h, s, a) 为键，h 从 0 开始；
    第 h 层的转移只支撑在第 h+1 层上。
    """
    model_id: str
    layers: Tuple[Tuple[str, ...], ...]
    actions: Tuple[int, ...]
    transitions: Mapping[StateActionKey, DiscreteDistribution]
    rewards: Mapping[StateActionKey, DiscreteDistribution]

    def __post_init__(self):
        layers = tuple(tuple(str(s) for s in layer) for layer in self.layers)
        actions = tuple(int(a) for a in self.actions)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "actions", actions)
        if len(layers) == 0 or len(layers[0]) != 1:
            raise InvalidDistribution(f"{self.model_id}: the first layer must hold exactly one state")
        all_states = [s for layer in layers for s in layer]
        if len(set(all_states)) != len(all_states):
            raise InvalidDistribution(f"{self.model_id}: layers are not disjoint")
        for h, layer in enumerate(layers):
            for s in layer:
                for a in actions:
                    law = self.rewards.get((h, s, a))
                    if law is None:
                        raise InvalidDistribution(f"{self.model_id}: missing reward law at {(h, s, a)}")
                    if any(not 0.0 <= float(r) <= 1.0 for r in law.support):
                        raise InvalidDistribution(f"{self.model_id}: reward outside [0,1] at {(h, s, a)}")
                    if h + 1 < len(layers):
                        row = self.transitions.get((h, s, a))
                        if row is None:
                            raise InvalidDistribution(f"{self.model_id}: missing transition at {(h, s, a)}")
                        foreign = set(row.positive_support()) - set(layers[h + 1])
                        if foreign:
                            raise InvalidDistribution(
                                f"{self.model_id}: transition at {(h, s, a)} leaves layer {h + 1}: {sorted(foreign)}")
        best = self._max_realizable_return()
        if best > 1.0 + RETURN_TOL:
            raise InvalidDistribution(f"{self.model_id}: a realizable trajectory earns {best} > 1")

    def _max_realizable_return(self) -> float:
        v_next: Dict[str, float] = {}
        for h in reversed(range(len(self.layers))):
            v_cur = {}
            for s in self.layers[h]:
                best = 0.0
                for a in self.actions:
                    r_max = max(float(r) for r in self.rewards[(h, s, a)].positive_support())
                    cont = 0.0
                    if h + 1 < len(self.layers):
                        cont = max(v_next[s2] for s2 in self.transitions[(h, s, a)].positive_support())
                    best = max(best, r_max + cont)
                v_cur[s] = best
            v_next = v_cur
        return v_next[self.layers[0][0]]

    @property
    def horizon(self) -> int:
        return len(self.layers)

    def reward_law(self, h: int, s: str, a: int) -> DiscreteDistribution:
        return self.rewards[(h, s, a)]

    def transition_law(self, h: int, s: str, a: int) -> Optional[DiscreteDistribution]:
        if h + 1 >= len(self.layers):
            return None
        return self.transitions[(h, s, a)]

    def mean_reward(self, h: int, s: str, a: int) -> float:
        return self.rewards[(h, s, a)].mean()


Model = Union[BanditModel, TabularMDP]
Observation = Union[float, Tuple[Tuple[str, int, float], ...]]


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """混合设定中的转移函数 P"""
    transition_id: str
    layers: Tuple[Tuple[str, ...], ...]
    actions: Tuple[int, ...]
    rows: Mapping[StateActionKey, DiscreteDistribution]


@dataclass(frozen=True, eq=False)
class RewardFunction:
    """混合设定中的确定性奖励函数 R(h, s, a)"""
    reward_id: str
    table: Mapping[StateActionKey, float]

    def __call__(self, h: int, s: str, a: int) -> float:
        return float(self.table[(h, s, a)])


def compose_hybrid_model(transition: TransitionKernel, reward: RewardFunction) -> TabularMDP:
    """M = (P, R)：确定性奖励用点质量表示"""
    rewards = {key: DiscreteDistribution.point_mass(float(value)) for key, value in reward.table.items()}
    return TabularMDP(
        model_id=hybrid_model_id(transition.transition_id, reward.reward_id),
        layers=transition.layers,
        actions=transition.actions,
        transitions=dict(transition.rows),
        rewards=rewards,
    )


def hybrid_model_id(transition_id: str, reward_id: str) -> str:
    return f"{transition_id}+{reward_id}"


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """已知特征 φ(h, s, a) ∈ R^d，奖励类中每个 R 满足 R(s,a) = <φ(s,a), θ_h(R)>"""
    dim: int
    values: Mapping[StateActionKey, np.ndarray]

    def __post_init__(self):
        table = {key: np.asarray(v, dtype=float).reshape(-1) for key, v in self.values.items()}
        for key, v in table.items():
            if len(v) != self.dim:
                raise FeatureMapMismatch(f"feature at {key} has length {len(v)}, expected {self.dim}")
        object.__setattr__(self, "values", table)

    def feature(self, h: int, s: str, a: int) -> np.ndarray:
        return self.values[(h, s, a)]

    def theta(self, reward: RewardFunction, horizon: int) -> np.ndarray:
        """逐层最小二乘求 θ_h(R)，残差超过 1e-9 则不可线性表示"""
        thetas = np.zeros((horizon, self.dim))
        for h in range(horizon):
            keys = [k for k in self.values if k[0] == h]
            X = np.array([self.values[k] for k in keys])
            y = np.array([reward.table[k] for k in keys])
            theta, *_ = np.linalg.lstsq(X, y, rcond=None)
            residual = float(np.max(np.abs(X @ theta - y))) if len(y) else 0.0
            if residual > 1e-9:
                raise FeatureMapMismatch(
                    f"reward {reward.reward_id} is not linear in the features at layer {h} (residual {residual:.3g})")
            thetas[h] = theta
        return thetas

    def validate(self, reward_class: Sequence[RewardFunction], horizon: int) -> Dict[str, np.ndarray]:
        return {R.reward_id: self.theta(R, horizon) for R in reward_class}


class HybridAdversary(Protocol):
    """根据轮次和历史选择本轮奖励函数的确定性回调"""

    def __call__(self, round_index: int, history: Sequence[Any]) -> str:
        ...


@dataclass(frozen=True)
class ConstantAdversary:
    reward_id: str

    def __call__(self, round_index: int, history: Sequence[Any]) -> str:
        return self.reward_id


@dataclass(frozen=True)
class AlternatingAdversary:
    """不经意对手：按轮次轮流使用给定的奖励函数"""
    reward_ids: Tuple[str, ...]

    def __call__(self, round_index: int, history: Sequence[Any]) -> str:
        return self.reward_ids[(round_index - 1) % len(self.reward_ids)]


@dataclass(frozen=True)
class ScheduleAdversary:
    """按显式列表循环"""
    schedule: Tuple[str, ...]

    def __call__(self, round_index: int, history: Sequence[Any]) -> str:
        return self.schedule[(round_index - 1) % len(self.schedule)]


@dataclass(eq=False)
class Environment:
    """有限DMSO实例：模型类、策略类、可枚举的观测空间和价值预言机"""
    name: str
    kind: EnvironmentKind
    models: Tuple[Model, ...]
    policies: Tuple[Policy, ...]
    true_model_id: Optional[str] = None
    feature_map: Optional[FeatureMap] = None
    transitions: Tuple[TransitionKernel, ...] = ()
    reward_class: Tuple[RewardFunction, ...] = ()
    true_transition_id: Optional[str] = None
    adversary: Optional[HybridAdversary] = None
    cap: int = DEFAULT_CAP
    _model_index: Dict[str, int] = field(init=False, repr=False)
    _policy_index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.models = tuple(self.models)
        self.policies = tuple(self.policies)
        if not self.models or not self.policies:
            raise ConfigError(f"environment {self.name} needs at least one model and one policy")
        first = self.models[0]
        for m in self.models:
            if m.layers != first.layers or m.actions != first.actions:
                raise ConfigError(f"model {m.model_id} does not share the state/action layout", key="models")
        self._model_index = {m.model_id: i for i, m in enumerate(self.models)}
        self._policy_index = {p.policy_id: i for i, p in enumerate(self.policies)}
        if len(self._model_index) != len(self.models) or len(self._policy_index) != len(self.policies):
            raise ConfigError(f"environment {self.name} has duplicate model or policy ids")
        states = [s for layer in self.layers for s in layer]
        for p in self.policies:
            if not p.covers(states):
                raise ConfigError(f"policy {p.policy_id} is not total over the states", key="policies")
        if self.true_model_id is not None and self.true_model_id not in self._model_index:
            raise ConfigError(f"unknown true model {self.true_model_id}", key="true_model")
        self._reward_union: Dict[StateActionKey, Tuple[float, ...]] = {}
        self._next_union: Dict[StateActionKey, Tuple[str, ...]] = {}

    @property
    def layers(self) -> Tuple[Tuple[str, ...], ...]:
        return self.models[0].layers

    @property
    def actions(self) -> Tuple[int, ...]:
        return self.models[0].actions

    @property
    def horizon(self) -> int:
        return len(self.layers)

    @property
    def initial_state(self) -> str:
        return self.layers[0][0]

    @property
    def is_bandit(self) -> bool:
        return isinstance(self.models[0], BanditModel)

    def model(self, model_id: str) -> Model:
        return self.models[self._model_index[model_id]]

    def model_index(self, model_id: str) -> int:
        return self._model_index[model_id]

    def policy(self, policy_id: str) -> Policy:
        return self.policies[self._policy_index[policy_id]]

    def policy_index(self, policy_id: str) -> int:
        return self._policy_index[policy_id]

    def reward_function(self, reward_id: str) -> RewardFunction:
        for R in self.reward_class:
            if R.reward_id == reward_id:
                return R
        raise ConfigError(f"adversary produced {reward_id!r}, which is not in the reward class", key="adversary")

    def model_at_round(self, round_index: int, history: Sequence[Any] = ()) -> Model:
        """M_t：随机设定为真实模型，混合设定为 (P⋆, R_t)"""
        if self.kind == "hybrid_mdp":
            if self.adversary is None or self.true_transition_id is None:
                raise ConfigError(f"hybrid environment {self.name} needs an adversary and a true transition")
            reward_id = self.adversary(round_index, history)
            self.reward_function(reward_id)
            return self.model(hybrid_model_id(self.true_transition_id, reward_id))
        if self.true_model_id is None:
            raise ConfigError(f"environment {self.name} has no true model", key="true_model")
        return self.model(self.true_model_id)

    def union_rewards(self, h: int, s: str, a: int) -> Tuple[float, ...]:
        """模型类中所有正概率奖励的并集"""
        key = (h, s, a)
        if key not in self._reward_union:
            seen = {float(r) for m in self.models for r in m.reward_law(h, s, a).positive_support()}
            self._reward_union[key] = tuple(sorted(seen))
        return self._reward_union[key]

    def union_next_states(self, h: int, s: str, a: int) -> Tuple[str, ...]:
        key = (h, s, a)
        if key not in self._next_union:
            seen = set()
            for m in self.models:
                row = m.transition_law(h, s, a)
                if row is not None:
                    seen.update(row.positive_support())
            self._next_union[key] = tuple(x for x in self.layers[h + 1] if x in seen) if h + 1 < self.horizon else ()
        return self._next_union[key]


def enumerate_arm_policies(num_arms: int) -> Tuple[Policy, ...]:
    return tuple(Policy.for_arm(a) for a in range(num_arms))


def enumerate_policies(layers: Tuple[Tuple[str, ...], ...], actions: Tuple[int, ...]) -> Tuple[Policy, ...]:
    """全部确定性策略，编号为按状态顺序拼接的动作串"""
    states = [s for layer in layers for s in layer]
    policies = []
    for combo in itertools.product(actions, repeat=len(states)):
        pid = "pi_" + "".join(str(a) for a in combo)
        policies.append(Policy(pid, tuple(zip(states, combo))))
    return tuple(policies)


def enumerate_observations(env: Environment, policy: Optional[Policy] = None) -> List[Observation]:
    """枚举策略下模型类中任一模型可达的全部观测

    每个观测都是完整的一局（老虎机为奖励值，MDP为 (s, a, r) 三元组序列）。
    policy 为 None 时枚举所有动作下的观测空间。

    Raises:
        CapExceeded: 观测数超过 env.cap
    """
    observations: List[Observation] = []
    cap = env.cap

    def push(obs: Observation):
        observations.append(obs)
        if len(observations) > cap:
            raise CapExceeded(len(observations), cap)

    if env.is_bandit:
        arms = [policy.arm] if policy is not None else list(env.actions)
        seen = set()
        for arm in arms:
            for r in env.union_rewards(0, BANDIT_STATE, arm):
                if r not in seen:
                    seen.add(r)
                    push(r)
        return observations

    def expand(h: int, s: str, prefix: Tuple[Tuple[str, int, float], ...]):
        actions = [policy.act(s)] if policy is not None else env.actions
        for a in actions:
            for r in env.union_rewards(h, s, a):
                step = prefix + ((s, a, r),)
                if h + 1 >= env.horizon:
                    push(step)
                    continue
                for s_next in env.union_next_states(h, s, a):
                    expand(h + 1, s_next, step)

    expand(0, env.initial_state, ())
    return observations


def observation_steps(policy: Policy, observation: Observation) -> List[Step]:
    """把观测拆成逐层的 Step"""
    if not isinstance(observation, tuple):
        return [Step(0, BANDIT_STATE, policy.arm, float(observation), None)]
    steps = []
    for h, (s, a, r) in enumerate(observation):
        s_next = observation[h + 1][0] if h + 1 < len(observation) else None
        steps.append(Step(h, s, a, float(r), s_next))
    return steps


def observation_return(observation: Observation) -> float:
    if not isinstance(observation, tuple):
        return float(observation)
    return float(sum(r for _, _, r in observation))


def observation_likelihood(model: Model, policy: Policy, observation: Observation) -> float:
    """M(o|π)

    共享支撑内、但该模型取不到的奖励概率为 0。

    Raises:
        UnknownObservation: 观测结构与模型不符，或奖励不在观测空间中
    """
    if isinstance(model, BanditModel):
        if isinstance(observation, tuple) or not isinstance(observation, (int, float, np.floating)):
            raise UnknownObservation(f"bandit observation must be a reward value, got {observation!r}")
        if float(observation) not in model.reward_support:
            raise UnknownObservation(f"reward {observation!r} is not in the shared support {model.reward_support}")
        return model.reward_laws[policy.arm].prob(float(observation))

    if not isinstance(observation, tuple) or len(observation) != model.horizon:
        raise UnknownObservation(f"expected a trajectory of length {model.horizon}, got {observation!r}")
    prob = 1.0
    for h, triple in enumerate(observation):
        if not isinstance(triple, tuple) or len(triple) != 3:
            raise UnknownObservation(f"malformed step {triple!r}")
        s, a, r = triple
        if s not in model.layers[h] or a not in model.actions:
            raise UnknownObservation(f"step {triple!r} is not in layer {h}")
        if h == 0 and s != model.layers[0][0]:
            raise UnknownObservation(f"trajectory must start at {model.layers[0][0]}")
        if not 0.0 <= float(r) <= 1.0:
            raise UnknownObservation(f"reward {r!r} at layer {h} outside [0,1]")
        if a != policy.act(s):
            return 0.0
        prob *= model.reward_law(h, s, a).prob(float(r))
        if h + 1 < model.horizon:
            prob *= model.transition_law(h, s, a).prob(observation[h + 1][0])
        if prob == 0.0:
            return 0.0
    return prob


def backward_induction(model: Model, policy: Optional[Policy] = None,
                       reward_fn: Optional[Callable[[int, str, int], float]] = None) -> QTable:
    """逆向归纳求 Q 表

    Args:
        model: 模型
        policy: 给定策略时求 Q^π，否则求 Q⋆
        reward_fn: 替代奖励 (h, s, a) -> float，默认用模型的平均奖励

    Returns:
        QTable
    """
    index = state_action_index(model.layers, model.actions)
    values = np.zeros(len(index))
    v_next: Dict[str, float] = {}
    for h in reversed(range(model.horizon)):
        v_cur = {}
        for s in model.layers[h]:
            qs = {}
            for a in model.actions:
                r = reward_fn(h, s, a) if reward_fn is not None else model.mean_reward(h, s, a)
                row = model.transition_law(h, s, a)
                cont = 0.0 if row is None else sum(q * v_next[s2] for s2, q in zip(row.support, row.probs) if q > 0)
                qs[a] = r + cont
                values[index(h, s, a)] = qs[a]
            v_cur[s] = qs[policy.act(s)] if policy is not None else max(qs.values())
        v_next = v_cur
    return QTable(index, values)


def q_star(model: Model) -> QTable:
    return backward_induction(model)


def q_policy(model: Model, policy: Policy,
             reward_fn: Optional[Callable[[int, str, int], float]] = None) -> QTable:
    """Q^π，可替换奖励表（混合设定下的线性奖励）"""
    return backward_induction(model, policy, reward_fn)


def value(model: Model, policy: Policy) -> float:
    """V_M(π)：老虎机为臂的平均奖励，MDP为逆向归纳"""
    if isinstance(model, BanditModel):
        return model.reward_laws[policy.arm].mean()
    table = backward_induction(model, policy)
    s1 = model.layers[0][0]
    return table.q(0, s1, policy.act(s1))


def greedy_policy(table: QTable) -> Policy:
    """Q表的贪心策略（不带编号，用于在策略类中查找）"""
    return Policy("greedy", table.greedy_choices())


def find_policy(env: Environment, choices: Tuple[Tuple[str, int], ...]) -> Optional[Policy]:
    target = dict(choices)
    for p in env.policies:
        if all(p.act(s) == a for s, a in target.items()):
            return p
    return None


def sample_observation(model: Model, policy: Policy, rng: np.random.Generator) -> Observation:
    if isinstance(model, BanditModel):
        return float(model.reward_laws[policy.arm].sample(rng))
    s = model.layers[0][0]
    steps = []
    for h in range(model.horizon):
        a = policy.act(s)
        r = float(model.reward_law(h, s, a).sample(rng))
        steps.append((s, a, r))
        if h + 1 < model.horizon:
            s = model.transition_law(h, s, a).sample(rng)
    return tuple(steps)
