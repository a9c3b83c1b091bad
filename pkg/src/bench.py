#!/usr/bin/env python3
"""
实验台
实验配置、多种子运行、遗憾与 Est 汇总、dig-dec 估计表和 CSV 输出
"""

import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from src.agents import AgentConfig, RegretTrace, build_agent, run_episode_sequence
from src.divergences import DIVERGENCE_MODES, DivergenceTables
from src.env_loader import environment_from_dict, load_environment
from src.environments import Environment
from src.errors import ConfigError
from src.partition import build_partition
from src.presets import PRESETS, make_bernoulli_bandit, make_layered_mdp, make_toy_bandit
from src.saddle_solver import SaddleConfig, estimate_digdec, estimate_odec, nested_grid_digdec

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parent.parent
GLOBAL_CONFIG = REPO_ROOT / "config" / "config.yaml"
ENVIRONMENT_DIR = REPO_ROOT / "config" / "environments"

CSV_COLUMNS = [
    "experiment", "agent", "seed", "round",
    "pseudo_regret_cum", "realized_regret_cum", "est_kl_cum", "est_div_cum", "gap",
]
METRICS = CSV_COLUMNS[4:]
DIGDEC_COLUMNS = ["instance", "eta", "mode", "digdec", "odec", "bound_ok", "resolution", "max_gap", "nested_digdec"]
FLOAT_FORMAT = "%.12g"

# 预设实例的参数可以直接写在实验文档顶层
PRESET_KEYS = ("epsilon_ratio", "true_model", "bellman_complete", "true_transition")


def load_global_config(path: Union[str, Path, None] = None) -> Dict[str, Any]:
    """读取 config/config.yaml；文件不存在时返回空配置"""
    path = Path(path or GLOBAL_CONFIG)
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def _key_lines(text: str) -> Dict[str, int]:
    """顶层键 → 行号（从 1 开始）"""
    node = yaml.compose(text)
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {key.value: key.start_mark.line + 1 for key, _ in node.value}


@dataclass
class ExperimentConfig:
    """实验配置（扁平键值）"""
    name: str = "experiment"
    environment: str = "toy_separation"         # 预设名或环境文档路径
    agents: List[str] = field(default_factory=lambda: ["dig_dec_sq", "optimistic"])
    T: int = 1024
    seeds: List[int] = field(default_factory=lambda: [1])
    output_dir: Optional[str] = None
    oracle: bool = True                          # 计算 Est 诊断
    eta: Optional[float] = None                  # 覆盖所有智能体的 η
    mode: Optional[str] = None                   # 覆盖所有智能体的散度模式
    workers: int = 1
    summary: bool = True
    description: str = ""
    epsilon_ratio: Optional[float] = None
    true_model: Optional[str] = None
    bellman_complete: Optional[bool] = None
    true_transition: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.agents, str):
            self.agents = [a.strip() for a in self.agents.split(",") if a.strip()]
        if isinstance(self.seeds, (int, str)):
            self.seeds = parse_seeds(self.seeds)
        if not isinstance(self.T, int) or self.T < 1:
            raise ConfigError(f"T must be an integer >= 1, got {self.T!r}", key="T")
        if not self.seeds:
            raise ConfigError("at least one seed is required", key="seeds")
        if any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError(f"seeds must be non-negative integers, got {self.seeds!r}", key="seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds in {self.seeds!r}", key="seeds")
        if not self.agents:
            raise ConfigError("at least one agent is required", key="agents")
        if self.mode is not None and self.mode not in DIVERGENCE_MODES:
            raise ConfigError(f"mode must be one of {DIVERGENCE_MODES}, got {self.mode!r}", key="mode")
        if self.eta is not None and self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}", key="eta")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}", key="workers")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], lines: Optional[Dict[str, int]] = None) -> "ExperimentConfig":
        lines = lines or {}
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError("unknown experiment key", key=key, line=lines.get(key))
        try:
            return cls(**data)
        except ConfigError as e:
            raise ConfigError(e.message, key=e.key, line=lines.get(e.key)) from e

    @classmethod
    def from_file(cls, path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None,
                  global_config: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        """默认值 < config.yaml 的 bench 段 < 实验文档 < 命令行覆盖"""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"experiment file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            doc = yaml.safe_load(text) or {}
            lines = _key_lines(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"invalid YAML in {path}: {e}", line=mark.line + 1 if mark else None)
        if not isinstance(doc, dict):
            raise ConfigError(f"experiment document must be a flat mapping: {path}")
        for key, value in doc.items():
            if isinstance(value, dict):
                raise ConfigError("nested mappings are not allowed in experiment documents",
                                  key=key, line=lines.get(key))

        if global_config is None:
            global_config = load_global_config()
        data: Dict[str, Any] = dict(global_config.get("bench") or {})
        data.update(doc)
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        data.setdefault("name", path.stem)
        return cls.from_dict(data, lines)

    def preset_params(self) -> Dict[str, Any]:
        params = {k: getattr(self, k) for k in PRESET_KEYS if getattr(self, k) is not None}
        if self.environment == "toy_separation":
            params["T"] = self.T
        return params

    def build_environment(self) -> Environment:
        """预设名或 YAML 文档 → Environment"""
        if self.environment in PRESETS:
            return environment_from_dict({"preset": self.environment, **self.preset_params()})
        path = Path(self.environment)
        if not path.exists():
            path = ENVIRONMENT_DIR / self.environment
        if not path.exists():
            raise ConfigError(f"unknown environment {self.environment!r}", key="environment")
        return load_environment(path)


@dataclass
class RegretRecord:
    """CSV 中的一行"""
    experiment: str
    agent: str
    seed: int
    round: int
    pseudo_regret_cum: float
    realized_regret_cum: float
    est_kl_cum: float
    est_div_cum: float
    gap: float


@dataclass
class RunSummary:
    """一次 (智能体, 种子) 运行的结果摘要"""
    experiment: str
    agent: str
    seed: int
    path: str
    T: int
    comparator: str
    pseudo_regret: float
    realized_regret: float
    est_kl: float
    est_div: float
    max_gap: float
    ledger_ok: Optional[bool] = None
    ledger_lhs: float = math.nan
    ledger_rhs: float = math.nan


@dataclass
class BenchResult:
    """cmd_run 的输出"""
    output_dir: Path
    runs: List[RunSummary]
    aggregate_path: Path
    summary_path: Optional[Path] = None

    def for_agent(self, agent: str) -> List[RunSummary]:
        return [r for r in self.runs if r.agent == agent]


def parse_seeds(text: Union[str, int, Sequence[int]]) -> List[int]:
    """"1,2,3"、"1-5" 或整数列表 → 种子列表"""
    if isinstance(text, int):
        return [text]
    if not isinstance(text, str):
        return [int(s) for s in text]
    seeds: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(f"cannot parse seed list {text!r}", key="seeds")
    return seeds


def run_rng(seed: int, agent: str) -> np.random.Generator:
    """每个 (种子, 智能体) 一条独立的 PCG64 流，与执行顺序无关"""
    sequence = np.random.SeedSequence([int(seed), zlib.crc32(agent.encode("utf-8"))])
    return np.random.Generator(np.random.PCG64(sequence))


def build_tables(env: Environment) -> DivergenceTables:
    return DivergenceTables(build_partition(env))


def trace_records(trace: RegretTrace, experiment: str, seed: int) -> List[RegretRecord]:
    """逐轮记录；Est 列在未开启诊断时为 NaN"""
    pseudo = trace.cumulative_pseudo_regret
    realized = trace.cumulative_realized_regret
    est_kl = np.cumsum(trace.est_kl)
    est_div = np.cumsum(trace.est_div)
    gaps = trace.gaps
    return [
        RegretRecord(experiment, trace.agent, seed, t + 1, float(pseudo[t]), float(realized[t]),
                     float(est_kl[t]), float(est_div[t]), float(gaps[t]))
        for t in range(trace.T)
    ]


def records_frame(records: Sequence[RegretRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(r) for r in records], columns=CSV_COLUMNS)
    rounds = frame["round"].to_numpy()
    if len(rounds) and not np.array_equal(rounds, np.arange(1, len(rounds) + 1)):
        raise ValueError("rounds must be contiguous from 1 to T")
    return frame


def write_csv_atomic(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """写入同目录下的临时文件再 os.replace"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    frame.to_csv(tmp, index=False, float_format=FLOAT_FORMAT)
    os.replace(tmp, path)
    return path


def run_file_name(experiment: str, agent: str, seed: int) -> str:
    return f"{experiment}__{agent}__seed{seed}.csv"


def run_single(config: ExperimentConfig, agent_config: AgentConfig, seed: int, output_dir: Union[str, Path],
               tables: Optional[DivergenceTables] = None) -> RunSummary:
    """运行一个 (智能体, 种子) 并写出其 CSV"""
    if tables is None:
        tables = build_tables(config.build_environment())
    env = tables.env
    agent = build_agent(agent_config, tables, config.T)
    trace = run_episode_sequence(agent, env, config.T, run_rng(seed, agent_config.name), oracle=config.oracle)
    path = write_csv_atomic(records_frame(trace_records(trace, config.name, seed)),
                            Path(output_dir) / run_file_name(config.name, agent_config.name, seed))

    summary = RunSummary(
        experiment=config.name,
        agent=agent_config.name,
        seed=seed,
        path=str(path),
        T=config.T,
        comparator=trace.comparator,
        pseudo_regret=float(trace.pseudo_regret.sum()),
        realized_regret=float(trace.realized_regret.sum()),
        est_kl=float(np.sum(trace.est_kl)),
        est_div=float(np.sum(trace.est_div)),
        max_gap=float(trace.gaps.max()),
    )
    if config.oracle:
        summary.ledger_ok, summary.ledger_lhs, summary.ledger_rhs = trace.ledger()
        if not summary.ledger_ok:
            logger.warning(f"{agent_config.name} seed={seed}: 遗憾分解不成立 {summary.ledger_lhs:.6g} > "
                           f"{summary.ledger_rhs:.6g}")
    logger.info(f"✅ {agent_config.name} seed={seed}: 伪遗憾={summary.pseudo_regret:.6g} → {path.name}")
    return summary


def _run_task(task: Tuple[ExperimentConfig, AgentConfig, int, str]) -> RunSummary:
    config, agent_config, seed, output_dir = task
    return run_single(config, agent_config, seed, output_dir)


def aggregate_runs(paths: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """读回各种子的 CSV，按 (experiment, agent, round) 求均值和最小/最大包络"""
    frame = pd.concat([pd.read_csv(p) for p in paths], ignore_index=True)
    grouped = frame.groupby(["experiment", "agent", "round"], sort=False)[METRICS].agg(["mean", "min", "max"])
    grouped.columns = [f"{metric}_{stat}" for metric, stat in grouped.columns]
    return grouped.reset_index()


def write_summary(runs: Sequence[RunSummary], path: Union[str, Path]) -> Path:
    """每个智能体一行：最终平均伪遗憾、Est 和最大间隙"""
    path = Path(path)
    lines = []
    for agent in dict.fromkeys(r.agent for r in runs):
        rows = [r for r in runs if r.agent == agent]
        ledger = [r.ledger_ok for r in rows if r.ledger_ok is not None]
        ledger_text = f"{sum(ledger)}/{len(ledger)}" if ledger else "n/a"
        lines.append(
            f"{agent}: seeds={len(rows)} T={rows[0].T} "
            f"pseudo_regret_mean={np.mean([r.pseudo_regret for r in rows]):.6g} "
            f"est_kl_mean={np.mean([r.est_kl for r in rows]):.6g} "
            f"est_div_mean={np.mean([r.est_div for r in rows]):.6g} "
            f"max_gap={max(r.max_gap for r in rows):.3g} ledger_ok={ledger_text}"
        )
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def cmd_run(config: ExperimentConfig, agent_configs: Sequence[AgentConfig]) -> BenchResult:
    """每个 (智能体, 种子) 一个 CSV，加上 aggregate.csv 和可选的 summary.txt"""
    if config.output_dir is None:
        raise ConfigError("output directory is not set", key="output_dir")
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(config, agent_config, seed, str(output_dir)) for agent_config in agent_configs for seed in config.seeds]
    logger.info(f"实验 {config.name}: {len(agent_configs)} 个智能体 × {len(config.seeds)} 个种子, T={config.T}")

    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(_run_task, tasks))
    else:
        tables = build_tables(config.build_environment())
        runs = [run_single(c, a, s, o, tables=tables) for c, a, s, o in tasks]

    aggregate_path = write_csv_atomic(aggregate_runs([r.path for r in runs]), output_dir / f"{config.name}__aggregate.csv")
    summary_path = write_summary(runs, output_dir / "summary.txt") if config.summary else None
    return BenchResult(output_dir, runs, aggregate_path, summary_path)


DIGDEC_INSTANCES = {
    "toy_separation": lambda: make_toy_bandit(T=1024),
    "toy_coarse": lambda: make_toy_bandit(T=16, epsilon_ratio=0.5),
    "bernoulli_three": lambda: make_bernoulli_bandit([[0.7, 0.3], [0.3, 0.7], [0.5, 0.4]], name="bernoulli_three"),
    "single_infoset": lambda: make_bernoulli_bandit([[0.6, 0.4]], name="single_infoset"),
    "layered_mdp": lambda: make_layered_mdp(bellman_complete=True),
}
DEFAULT_DIGDEC_INSTANCES = ("toy_separation", "toy_coarse", "bernoulli_three")
NESTED_GRID_MAX = 3


def digdec_row(name: str, tables: DivergenceTables, eta: float, mode: str, config: Optional[SaddleConfig] = None,
               resolution: float = 0.05, nested: bool = True) -> Dict[str, Any]:
    """单个 (实例, η, 模式) 的 dig-dec / o-dec 估计以及 dig-dec ≤ o-dec + η 检查"""
    dig = estimate_digdec(tables, eta, mode, config, resolution)
    odec = estimate_odec(tables, eta, mode, config, resolution)
    slack = 2.0 * (dig.max_gap + odec.max_gap)
    nested_value = math.nan
    if nested and tables.num_policies <= NESTED_GRID_MAX and tables.num_world_points <= NESTED_GRID_MAX:
        nested_value = nested_grid_digdec(tables, eta, mode, rho_resolution=resolution)
    return {
        "instance": name,
        "eta": eta,
        "mode": mode,
        "digdec": dig.value,
        "odec": odec.value,
        "bound_ok": bool(dig.value <= odec.value + eta + slack + 1e-9),
        "resolution": resolution,
        "max_gap": max(dig.max_gap, odec.max_gap),
        "nested_digdec": nested_value,
    }


def cmd_digdec(instances: Sequence[str], etas: Sequence[float], modes: Sequence[str],
               output_dir: Union[str, Path, None] = None, config: Optional[SaddleConfig] = None,
               resolution: float = 0.05, nested: bool = True) -> pd.DataFrame:
    """逐 (实例, η, 模式) 估计 dig-dec 与 o-dec，写出 digdec.csv

    Raises:
        CapExceeded: 实例的 |Φ| 超过 4
    """
    rows = []
    for name in instances:
        if name not in DIGDEC_INSTANCES:
            raise ConfigError(f"unknown digdec instance {name!r}; known: {sorted(DIGDEC_INSTANCES)}", key="instances")
        tables = build_tables(DIGDEC_INSTANCES[name]())
        for mode in modes:
            for eta in etas:
                rows.append(digdec_row(name, tables, float(eta), mode, config, resolution, nested))
    frame = pd.DataFrame(rows, columns=DIGDEC_COLUMNS)
    if output_dir is not None:
        write_csv_atomic(frame, Path(output_dir) / "digdec.csv")
    return frame
