"""
异常定义
实验室各模块共用的错误类型
"""

from typing import Optional


class DigDecError(Exception):
    """所有实验室错误的基类"""


class InvalidDistribution(DigDecError, ValueError):
    """概率表不合法（负值、未归一化或支撑重复）"""


class CapExceeded(DigDecError):
    """观测空间超过枚举上限"""

    def __init__(self, size: int, cap: int):
        super().__init__(f"observation space has more than {cap} outcomes (reached {size})")
        self.size = size
        self.cap = cap


class UnknownObservation(DigDecError):
    """观测不属于该环境的观测空间"""


class PolicyNotInClass(DigDecError):
    """模型的贪心策略不在策略类中"""


class Assumption3Violated(DigDecError):
    """混合划分中同组转移对某个奖励给出不同的Q值"""


class NotComplete(DigDecError):
    """Bellman像不在划分中"""


class ZeroEvidence(DigDecError):
    """观测在所有有质量的模型下概率均为0"""


class OddEpoch(DigDecError):
    """epoch长度必须为偶数"""


class FeatureMapMismatch(DigDecError, ValueError):
    """奖励函数不能由特征线性表示"""


class IncompatibleAgentConfig(DigDecError, ValueError):
    """估计引擎与散度模式不匹配"""


class ConfigError(DigDecError):
    """配置解析错误，附带键名和行号"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        location = []
        if key is not None:
            location.append(f"key '{key}'")
        if line is not None:
            location.append(f"line {line}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.message = message
        self.key = key
        self.line = line


class InfiniteKL:
    """KL散度无穷大的类型化信号

    kl() 在 p(x) > 0 而 q(x) = 0 时返回 INFINITE_KL，而不是一个浮点数。
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFINITE_KL"

    def __bool__(self) -> bool:
        return True


INFINITE_KL = InfiniteKL()


def is_infinite(value) -> bool:
    """判断一个散度值是否为 INFINITE_KL"""
    return value is INFINITE_KL
