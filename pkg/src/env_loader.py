#!/usr/bin/env python3
"""
环境文档加载
把 config/environments/*.yaml 解析成 Environment；数值用十进制字符串或分数书写
"""

import logging
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple, Union

import yaml

from src.distribution import DiscreteDistribution
from src.environments import (
    AlternatingAdversary,
    BanditModel,
    ConstantAdversary,
    Environment,
    FeatureMap,
    Policy,
    RewardFunction,
    ScheduleAdversary,
    TabularMDP,
    TransitionKernel,
    compose_hybrid_model,
    enumerate_arm_policies,
    enumerate_policies,
)
from src.errors import ConfigError, InvalidDistribution
from src.presets import PRESETS

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

ENV_KINDS = ("bandit", "stochastic_mdp", "hybrid_mdp")


def parse_number(value: Any, key: str = "") -> float:
    """十进制字符串、分数字符串或数字 → float（经 Fraction 精确解析）"""
    try:
        return float(Fraction(str(value).strip()))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"cannot parse number {value!r}: {e}", key=key or None)


def parse_key(text: str, key: str = "") -> Tuple[int, str, int]:
    """"h,s,a" → (h, s, a)"""
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"state-action key must look like 'h,s,a', got {text!r}", key=key or None)
    try:
        return int(parts[0]), parts[1], int(parts[2])
    except ValueError:
        raise ConfigError(f"bad state-action key {text!r}", key=key or None)


def parse_law(table: Mapping[Any, Any], key: str, numeric_support: bool = True) -> DiscreteDistribution:
    """{结果: 概率} → DiscreteDistribution"""
    if not isinstance(table, Mapping) or not table:
        raise ConfigError("expected a non-empty mapping of outcome -> probability", key=key)
    support = [parse_number(k, key) if numeric_support else str(k) for k in table]
    probs = [parse_number(v, key) for v in table.values()]
    try:
        return DiscreteDistribution(tuple(support), probs)
    except InvalidDistribution as e:
        raise ConfigError(str(e), key=key)


def _require(doc: Mapping[str, Any], key: str) -> Any:
    if key not in doc:
        raise ConfigError("missing required key", key=key)
    return doc[key]


def _layers(doc: Mapping[str, Any]) -> Tuple[Tuple[str, ...], ...]:
    return tuple(tuple(str(s) for s in layer) for layer in _require(doc, "layers"))


def _policies(doc: Mapping[str, Any], layers, actions) -> Tuple[Policy, ...]:
    spec = doc.get("policies", "all")
    if spec == "all":
        return enumerate_policies(layers, actions)
    if not isinstance(spec, list):
        raise ConfigError("policies must be 'all' or a list", key="policies")
    out = []
    for i, entry in enumerate(spec):
        try:
            out.append(Policy(str(entry["id"]), tuple((str(s), int(a)) for s, a in entry["choices"].items())))
        except (KeyError, TypeError, AttributeError):
            raise ConfigError(f"policy entry {i} needs 'id' and a 'choices' mapping", key="policies")
    return tuple(out)


def _bandit(doc: Mapping[str, Any]) -> Environment:
    entries = []
    for i, entry in enumerate(_require(doc, "models")):
        arms = tuple(parse_law(arm, f"models[{i}].arms[{a}]") for a, arm in enumerate(entry["arms"]))
        entries.append((str(entry["id"]), arms))
    support = tuple(parse_number(r, "reward_support") for r in doc.get("reward_support", ()))
    # 未显式给出时取所有模型奖励支撑的并集，使各模型共享同一观测空间
    support = support or tuple(sorted({float(r) for _, arms in entries for law in arms for r in law.support}))
    models = [BanditModel(model_id, arms, support) for model_id, arms in entries]
    return Environment(
        name=str(doc.get("name", "bandit")),
        kind="bandit",
        models=tuple(models),
        policies=enumerate_arm_policies(models[0].num_arms),
        true_model_id=doc.get("true_model"),
        cap=int(doc.get("cap", 50_000)),
    )


def _rows(table: Mapping[str, Any], prefix: str, numeric_support: bool) -> Dict[Tuple[int, str, int], DiscreteDistribution]:
    return {parse_key(k, prefix): parse_law(v, f"{prefix}.{k}", numeric_support) for k, v in (table or {}).items()}


def _stochastic(doc: Mapping[str, Any]) -> Environment:
    layers = _layers(doc)
    actions = tuple(int(a) for a in _require(doc, "actions"))
    models = []
    for i, entry in enumerate(_require(doc, "models")):
        try:
            models.append(TabularMDP(
                model_id=str(entry["id"]),
                layers=layers,
                actions=actions,
                transitions=_rows(entry.get("transitions"), f"models[{i}].transitions", numeric_support=False),
                rewards=_rows(entry["rewards"], f"models[{i}].rewards", numeric_support=True),
            ))
        except InvalidDistribution as e:
            raise ConfigError(str(e), key=f"models[{i}]")
    return Environment(
        name=str(doc.get("name", "stochastic_mdp")),
        kind="stochastic_mdp",
        models=tuple(models),
        policies=_policies(doc, layers, actions),
        true_model_id=doc.get("true_model"),
        cap=int(doc.get("cap", 50_000)),
    )


def _adversary(spec: Any):
    if isinstance(spec, str):
        return ConstantAdversary(spec)
    if not isinstance(spec, Mapping):
        raise ConfigError("adversary must be a reward id or a mapping", key="adversary")
    kind = spec.get("type", "alternating")
    if kind == "constant":
        return ConstantAdversary(str(spec["reward"]))
    if kind == "alternating":
        return AlternatingAdversary(tuple(str(r) for r in spec["rewards"]))
    if kind == "schedule":
        return ScheduleAdversary(tuple(str(r) for r in spec["schedule"]))
    raise ConfigError(f"unknown adversary type {kind!r}", key="adversary")


def _hybrid(doc: Mapping[str, Any]) -> Environment:
    layers = _layers(doc)
    actions = tuple(int(a) for a in _require(doc, "actions"))
    transitions = tuple(
        TransitionKernel(str(t["id"]), layers, actions, _rows(t["rows"], f"transitions[{i}].rows", False))
        for i, t in enumerate(_require(doc, "transitions"))
    )
    features = {parse_key(k, "features"): [parse_number(x, f"features.{k}") for x in v]
                for k, v in _require(doc, "features").items()}
    dim = len(next(iter(features.values())))
    rewards = tuple(
        RewardFunction(str(r["id"]), {parse_key(k, "reward_class"): parse_number(v, f"reward_class[{i}].{k}")
                                      for k, v in r["table"].items()})
        for i, r in enumerate(_require(doc, "reward_class"))
    )
    try:
        models = tuple(compose_hybrid_model(P, R) for P in transitions for R in rewards)
    except InvalidDistribution as e:
        raise ConfigError(str(e), key="transitions")
    return Environment(
        name=str(doc.get("name", "hybrid_mdp")),
        kind="hybrid_mdp",
        models=models,
        policies=_policies(doc, layers, actions),
        feature_map=FeatureMap(dim, features),
        transitions=transitions,
        reward_class=rewards,
        true_transition_id=str(_require(doc, "true_transition")),
        adversary=_adversary(_require(doc, "adversary")),
        cap=int(doc.get("cap", 50_000)),
    )


def _preset_value(value: Any) -> Any:
    """预设参数里的数值字符串按 Fraction 解析，其余原样保留"""
    if not isinstance(value, str):
        return value
    try:
        return float(Fraction(value.strip()))
    except (ValueError, ZeroDivisionError):
        return value


def environment_from_dict(doc: Mapping[str, Any]) -> Environment:
    """环境文档（已解析的 YAML）→ Environment

    文档可以直接写 `preset: <名称>` 加参数，或完整写出模型。
    """
    if not isinstance(doc, Mapping):
        raise ConfigError("environment document must be a mapping")
    if "preset" in doc:
        name = doc["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}", key="preset")
        params = {k: _preset_value(v) for k, v in doc.items() if k != "preset"}
        try:
            return PRESETS[name](**params)
        except TypeError as e:
            raise ConfigError(f"bad parameters for preset {name!r}: {e}", key="preset")
    kind = _require(doc, "kind")
    if kind not in ENV_KINDS:
        raise ConfigError(f"kind must be one of {ENV_KINDS}, got {kind!r}", key="kind")
    try:
        if kind == "bandit":
            return _bandit(doc)
        if kind == "stochastic_mdp":
            return _stochastic(doc)
        return _hybrid(doc)
    except KeyError as e:
        raise ConfigError("missing required key", key=str(e.args[0]))


def load_environment(path: Union[str, Path]) -> Environment:
    """从 YAML 文件加载环境"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"environment file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"invalid YAML in {path}: {e}", line=mark.line + 1 if mark else None)
    env = environment_from_dict(doc)
    logger.info(f"加载环境 {env.name}: kind={env.kind}, |M|={len(env.models)}, |Π|={len(env.policies)}")
    return env
