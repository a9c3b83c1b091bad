"""
离散概率分布
ρ、ν、p、奖励分布和转移行都使用同一个概率表类型
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, Iterable, Sequence, Tuple

import numpy as np

from src.errors import InvalidDistribution

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """有限支撑上的概率表"""
    support: Tuple[Hashable, ...]
    probs: np.ndarray
    _index: Dict[Hashable, int] = field(init=False, repr=False)

    def __post_init__(self):
        support = tuple(self.support)
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if len(support) != len(probs):
            raise InvalidDistribution(
                f"support has {len(support)} entries but probs has {len(probs)}")
        if len(support) == 0:
            raise InvalidDistribution("empty support")
        if len(set(support)) != len(support):
            raise InvalidDistribution(f"duplicate support entries: {support}")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidDistribution(f"negative or non-finite probabilities: {probs}")
        total = float(probs.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise InvalidDistribution(f"probabilities sum to {total!r}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_index", {x: i for i, x in enumerate(support)})

    @classmethod
    def point_mass(cls, outcome: Hashable) -> "DiscreteDistribution":
        return cls((outcome,), np.ones(1))

    @classmethod
    def uniform(cls, support: Sequence[Hashable]) -> "DiscreteDistribution":
        n = len(support)
        return cls(tuple(support), np.full(n, 1.0 / n))

    @classmethod
    def from_weights(cls, support: Sequence[Hashable], weights: Iterable[float]) -> "DiscreteDistribution":
        """非负权重归一化后构造分布"""
        w = np.asarray(list(weights), dtype=float)
        total = w.sum()
        if total <= 0:
            raise InvalidDistribution("weights sum to zero")
        return cls(tuple(support), w / total)

    @classmethod
    def from_dict(cls, table: Dict[Hashable, float]) -> "DiscreteDistribution":
        return cls(tuple(table.keys()), np.array(list(table.values()), dtype=float))

    def __len__(self) -> int:
        return len(self.support)

    def prob(self, outcome: Hashable) -> float:
        """返回 outcome 的概率，不在支撑中时为 0"""
        i = self._index.get(outcome)
        return 0.0 if i is None else float(self.probs[i])

    def index_of(self, outcome: Hashable) -> int:
        return self._index[outcome]

    def positive_support(self) -> Tuple[Hashable, ...]:
        return tuple(x for x, q in zip(self.support, self.probs) if q > 0)

    def as_dict(self) -> Dict[Hashable, float]:
        return {x: float(q) for x, q in zip(self.support, self.probs)}

    def expectation(self, fn: Callable[[Any], float]) -> float:
        return float(sum(q * fn(x) for x, q in zip(self.support, self.probs) if q > 0))

    def mean(self) -> float:
        """数值支撑上的期望"""
        return float(np.dot(np.asarray(self.support, dtype=float), self.probs))

    def sample(self, rng: np.random.Generator) -> Hashable:
        """用逆CDF抽样，只消耗一个均匀随机数"""
        cdf = np.cumsum(self.probs)
        u = rng.random() * cdf[-1]
        i = int(np.searchsorted(cdf, u, side="right"))
        return self.support[min(i, len(self.support) - 1)]


def check_simplex(vector: np.ndarray, name: str = "distribution") -> np.ndarray:
    """检查数组是否为概率向量"""
    v = np.asarray(vector, dtype=float)
    if np.any(v < -NORMALIZATION_TOL) or abs(float(v.sum()) - 1.0) > NORMALIZATION_TOL:
        raise InvalidDistribution(f"{name} is not on the simplex: sum={v.sum()!r}")
    return v


def normalize(weights: np.ndarray) -> np.ndarray:
    w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    total = w.sum()
    if total <= 0:
        raise InvalidDistribution("cannot normalize zero weights")
    return w / total
