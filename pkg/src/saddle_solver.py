#!/usr/bin/env python3
"""
极小极大求解器
求 min_p max_ν AIR(p, ν; ρ) 并给出对偶间隙证书；在小实例上估计 dig-dec 与 o-dec
"""

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp, rel_entr, softmax

from src.distribution import DiscreteDistribution, normalize
from src.divergences import DIVERGENCE_MODES, DivergenceMode, DivergenceTables, KLValue
from src.errors import INFINITE_KL, CapExceeded, DigDecError

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

LOG_FLOOR = -700.0
DIGDEC_PHI_CAP = 4
GRID_BATCH = 20_000


@dataclass
class SaddleConfig:
    """求解器配置"""
    max_iters: int = 200             # 主问题列生成迭代上限
    warm_start_iters: int = 8        # 乘性权重预热轮数（已有热启动列时跳过）
    step_scale: float = 1.0          # ν 上升初始步长 = η · step_scale
    gap_tolerance: float = 1e-4
    restarts: int = 3                # 额外的 Dirichlet 起点个数
    inner_iters: int = 500           # 单次熵镜像上升的迭代上限
    grid_resolution: float = 1e-3    # 小 Ψ 上的网格复核分辨率
    grid_check_points: int = 3       # |Ψ| 不超过该值时做网格复核
    max_warm_columns: int = 40
    rho_floor: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if self.gap_tolerance <= 0:
            raise ValueError(f"gap_tolerance must be positive, got {self.gap_tolerance}")
        if self.max_iters < 1 or self.inner_iters < 1:
            raise ValueError("max_iters and inner_iters must be at least 1")
        if self.step_scale <= 0:
            raise ValueError(f"step_scale must be positive, got {self.step_scale}")
        if not 0 < self.grid_resolution <= 1:
            raise ValueError(f"grid_resolution must lie in (0, 1], got {self.grid_resolution}")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "SaddleConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in known})


@dataclass
class WorldResponse:
    """ν 玩家的最优响应"""
    nu: np.ndarray
    log_nu: np.ndarray
    value: float
    fw_gap: float
    iterations: int
    non_improvement: bool = False


@dataclass
class SaddlePoint:
    """鞍点及其证书

    nu 是对 p 的最优响应（agent 和 Est 使用），nu_certificate 是主问题对偶权重混合出的 ν̄。
    """
    p: DiscreteDistribution
    nu: DiscreteDistribution
    air_value: float
    gap: float
    iterations: int
    gap_met: bool = True
    nu_certificate: Optional[DiscreteDistribution] = None
    non_improvement: bool = False
    columns: Tuple[np.ndarray, ...] = field(default=(), repr=False)

    @property
    def p_vector(self) -> np.ndarray:
        return np.asarray(self.p.probs)

    @property
    def nu_vector(self) -> np.ndarray:
        return np.asarray(self.nu.probs)


@dataclass(frozen=True)
class DigDecEstimate:
    """网格估计：value = max_ρ 鞍点值"""
    value: float
    argmax_rho: Tuple[float, ...]
    resolution: float
    max_gap: float


def _as_vector(x: Union[DiscreteDistribution, np.ndarray, Sequence[float]], support: Sequence[str]) -> np.ndarray:
    if isinstance(x, DiscreteDistribution):
        return np.array([x.prob(s) for s in support])
    return np.asarray(x, dtype=float)


def floor_rho(rho: np.ndarray, floor: float) -> np.ndarray:
    """求解器内部使用的 ρ：下界 floor 后重新归一化"""
    return normalize(np.maximum(np.asarray(rho, dtype=float), floor))


class AIRObjective:
    """固定 ρ, η, D̄ 模式下的 AIR(·, ·; ρ)

    AIR(δ_π, ν) = ν·(v⋆ − v_π) − (1/η)(I_π(ν) + ν·(ρ D̄^π))，
    I_π(ν) = Σ_{φ,o} w_φ(o) log(w_φ(o) / (m(o) ρ_φ))，w_φ(o) = Σ_{ψ∈φ} ν_ψ M_ψ(o|π)。
    """

    def __init__(self, tables: DivergenceTables, rho: np.ndarray, eta: float, mode: DivergenceMode):
        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}")
        if mode not in DIVERGENCE_MODES:
            raise ValueError(f"unknown divergence mode {mode!r}")
        self.tables = tables
        self.rho = np.asarray(rho, dtype=float)
        self.eta = float(eta)
        self.mode = mode
        with np.errstate(divide="ignore"):
            self.log_rho = np.log(self.rho)
        self.regret = tables.v_star[None, :] - tables.v_pol                    # (|Π|, |Ψ|)
        self.penalty = np.einsum("f,pfw->pw", self.rho, tables.dbar(mode))     # (|Π|, |Ψ|)
        self._mask = (tables.membership > 0)[:, :, None]
        self.owner = tables.owner

    @property
    def num_policies(self) -> int:
        return self.tables.num_policies

    @property
    def num_world_points(self) -> int:
        return self.tables.num_world_points

    def _log_posterior(self, i: int, log_nu: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """返回 (log w_φ(o), log m(o))"""
        joint = log_nu[:, None] + self.tables.log_world_likelihoods[i]
        stacked = np.where(self._mask, joint[None, :, :], -np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_w = logsumexp(stacked, axis=1)
            log_m = logsumexp(log_w, axis=0)
        return log_w, log_m

    def _information(self, log_w: np.ndarray, log_m: np.ndarray) -> float:
        w = np.exp(log_w)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = log_w - log_m[None, :] - self.log_rho[:, None]
            terms = np.where(w > 0, w * ratio, 0.0)
        return float(np.sum(terms))

    def policy_value(self, i: int, log_nu: np.ndarray) -> float:
        nu = np.exp(log_nu)
        info = self._information(*self._log_posterior(i, log_nu))
        return float(nu @ self.regret[i] - (info + nu @ self.penalty[i]) / self.eta)

    def policy_values(self, log_nu: np.ndarray) -> np.ndarray:
        """(|Π|,) 的 AIR(δ_π, ν)"""
        return np.array([self.policy_value(i, log_nu) for i in range(self.num_policies)])

    def value_and_gradient(self, p: np.ndarray, log_nu: np.ndarray) -> Tuple[float, np.ndarray]:
        """AIR(p, ν) 及其对 ν 的梯度"""
        nu = np.exp(log_nu)
        total = 0.0
        grad = np.zeros(self.num_world_points)
        for i in np.flatnonzero(p > 0):
            log_w, log_m = self._log_posterior(i, log_nu)
            info = self._information(log_w, log_m)
            lik = self.tables.world_likelihoods[i]
            with np.errstate(divide="ignore", invalid="ignore"):
                log_ratio = (log_w - log_m[None, :])[self.owner] - self.log_rho[self.owner][:, None]
                g_info = np.sum(np.where(lik > 0, lik * log_ratio, 0.0), axis=1)
            total += p[i] * float(nu @ self.regret[i] - (info + nu @ self.penalty[i]) / self.eta)
            grad += p[i] * (self.regret[i] - (g_info + self.penalty[i]) / self.eta)
        return total, grad

    def batch_policy_values(self, nus: np.ndarray) -> np.ndarray:
        """一批 ν（行）上的 AIR(δ_π, ν)，形状 (N, |Π|)；用于网格搜索"""
        nus = np.atleast_2d(nus)
        out = np.zeros((len(nus), self.num_policies))
        membership = self.tables.membership
        for i in range(self.num_policies):
            lik = self.tables.world_likelihoods[i]
            w = np.einsum("fw,nw,wo->nfo", membership, nus, lik)
            m = w.sum(axis=1, keepdims=True)
            info = np.sum(rel_entr(w, m * self.rho[None, :, None]), axis=(1, 2))
            out[:, i] = nus @ self.regret[i] - (info + nus @ self.penalty[i]) / self.eta
        return out


def _normalize_log(log_nu: np.ndarray) -> np.ndarray:
    out = np.maximum(log_nu - logsumexp(log_nu), LOG_FLOOR)
    return out - logsumexp(out)


def _fw_gap(log_nu: np.ndarray, grad: np.ndarray) -> float:
    """凹函数在单纯形上的 Frank-Wolfe 间隙 max_ψ G_ψ − ν·G"""
    return max(float(np.max(grad) - np.exp(log_nu) @ grad), 0.0)


def _ascent(objective: AIRObjective, p: np.ndarray, log_nu0: np.ndarray, config: SaddleConfig,
            max_iters: Optional[int] = None) -> WorldResponse:
    """熵镜像上升 ν ← ν·exp(s·G)，带回溯步长，FW 间隙足够小时停止"""
    step = objective.eta * config.step_scale
    log_nu = _normalize_log(log_nu0)
    value, grad = objective.value_and_gradient(p, log_nu)
    gap = _fw_gap(log_nu, grad)
    target = 0.1 * config.gap_tolerance
    it = 0
    limit = max_iters or config.inner_iters
    while it < limit and gap > target:
        it += 1
        while True:
            candidate = _normalize_log(log_nu + step * grad)
            cand_value, cand_grad = objective.value_and_gradient(p, candidate)
            if cand_value >= value - 1e-14:
                break
            step *= 0.5
            if step < 1e-12:
                return WorldResponse(np.exp(log_nu), log_nu, value, gap, it)
        log_nu, value, grad = candidate, cand_value, cand_grad
        gap = _fw_gap(log_nu, grad)
        step = min(step * 1.5, 1e6)
    return WorldResponse(np.exp(log_nu), log_nu, value, gap, it)


def simplex_grid(dim: int, resolution: float) -> np.ndarray:
    """分辨率为 resolution 的单纯形重心网格，形状 (N, dim)"""
    total = int(round(1.0 / resolution))

    def compositions(n: int, parts: int) -> np.ndarray:
        if parts == 1:
            return np.array([[n]])
        if parts == 2:
            first = np.arange(n + 1)
            return np.column_stack([first, n - first])
        blocks = []
        for first in range(n + 1):
            rest = compositions(n - first, parts - 1)
            blocks.append(np.column_stack([np.full(len(rest), first), rest]))
        return np.vstack(blocks)

    return compositions(total, dim) / total


def grid_best_response(objective: AIRObjective, p: np.ndarray, resolution: float) -> Tuple[np.ndarray, float]:
    """网格上穷举 max_ν AIR(p, ν)"""
    grid = simplex_grid(objective.num_world_points, resolution)
    best_value = -math.inf
    best_nu = grid[0]
    for start in range(0, len(grid), GRID_BATCH):
        batch = grid[start:start + GRID_BATCH]
        values = objective.batch_policy_values(batch) @ p
        j = int(np.argmax(values))
        if values[j] > best_value:
            best_value, best_nu = float(values[j]), batch[j]
    return best_nu, best_value


def best_response_world(objective: AIRObjective, p: np.ndarray, config: SaddleConfig,
                        warm_start: Optional[np.ndarray] = None, grid_check: bool = True) -> WorldResponse:
    """max_ν AIR(p, ν)：多起点熵镜像上升

    起点为均匀分布、热启动点和 config.restarts 个固定种子的 Dirichlet 点；
    起点结果相差超过 gap_tolerance 时标记 non_improvement（不抛异常）。
    """
    n = objective.num_world_points
    if n == 1:
        log_nu = np.zeros(1)
        value, grad = objective.value_and_gradient(p, log_nu)
        return WorldResponse(np.ones(1), log_nu, value, 0.0, 0)

    starts = [np.full(n, -math.log(n))]
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float))
    rng = np.random.Generator(np.random.PCG64(config.seed))
    for _ in range(config.restarts):
        starts.append(np.log(np.maximum(rng.dirichlet(np.ones(n)), 1e-300)))

    results = [_ascent(objective, p, s, config) for s in starts]
    best = max(results, key=lambda r: r.value)
    spread = max(r.value for r in results) - min(r.value for r in results)
    if spread > config.gap_tolerance:
        best.non_improvement = True
        logger.warning(f"最优响应各起点结果不一致: spread={spread:.3g}")

    if grid_check and n <= config.grid_check_points:
        grid_nu, grid_value = grid_best_response(objective, p, config.grid_resolution)
        if grid_value > best.value + config.gap_tolerance:
            logger.warning(f"网格复核发现更优的 ν: {grid_value:.6g} > {best.value:.6g}")
            # 上升是单调的，从网格点出发的结果不低于网格值
            best = _ascent(objective, p, np.log(np.maximum(grid_nu, 1e-300)), config)
            best.non_improvement = True
    return best


def best_response_policy(objective: AIRObjective, nu: np.ndarray) -> Tuple[int, float]:
    """argmin_π AIR(δ_π, ν)，平局取编号最小的策略

    Returns:
        (策略下标, 值)
    """
    with np.errstate(divide="ignore"):
        values = objective.policy_values(np.log(np.asarray(nu, dtype=float)))
    best = float(np.min(values))
    index = int(np.flatnonzero(values <= best + 1e-12)[0])
    return index, float(values[index])


def _solve_matrix_game(payoff: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """列玩家最小化、行玩家最大化的矩阵博弈 min_p max_c (payoff @ p)_c

    Args:
        payoff: (行数, |Π|)

    Returns:
        (p, 行玩家混合 λ, 博弈值)
    """
    rows, cols = payoff.shape
    c = np.zeros(cols + 1)
    c[-1] = 1.0
    primal = linprog(
        c,
        A_ub=np.hstack([payoff, -np.ones((rows, 1))]),
        b_ub=np.zeros(rows),
        A_eq=np.hstack([np.ones((1, cols)), np.zeros((1, 1))]),
        b_eq=np.ones(1),
        bounds=[(0, None)] * cols + [(None, None)],
        method="highs",
    )
    c_dual = np.zeros(rows + 1)
    c_dual[-1] = -1.0
    dual = linprog(
        c_dual,
        A_ub=np.hstack([-payoff.T, np.ones((cols, 1))]),
        b_ub=np.zeros(cols),
        A_eq=np.hstack([np.ones((1, rows)), np.zeros((1, 1))]),
        b_eq=np.ones(1),
        bounds=[(0, None)] * rows + [(None, None)],
        method="highs",
    )
    if not primal.success or not dual.success:
        raise DigDecError(f"matrix game LP failed: {primal.message} / {dual.message}")
    p = normalize(np.maximum(primal.x[:cols], 0.0))
    lam = normalize(np.maximum(dual.x[:rows], 0.0))
    return p, lam, float(primal.x[-1])


def policy_distribution(tables: DivergenceTables, p: np.ndarray) -> DiscreteDistribution:
    return DiscreteDistribution(tuple(pi.policy_id for pi in tables.policies), normalize(p))


def world_distribution(tables: DivergenceTables, nu: np.ndarray) -> DiscreteDistribution:
    return DiscreteDistribution(tuple(w.point_id for w in tables.partition.world_points), normalize(nu))


def solve_minimax(tables: DivergenceTables, rho: Union[np.ndarray, DiscreteDistribution], eta: float,
                  mode: DivergenceMode, config: Optional[SaddleConfig] = None,
                  warm_columns: Optional[Sequence[np.ndarray]] = None) -> SaddlePoint:
    """min_{p∈Δ(Π)} max_{ν∈Δ(Ψ)} AIR(p, ν; ρ)

    乘性权重预热收集 ν 列，之后做受限主问题列生成：线性规划给出 p̂ 和对偶权重 λ，
    ν̄ = Σλ_i ν_i，对 p̂ 的最优响应作为新列加入。
    上界 AIR(p̂, ν_br) + FW 间隙，下界 max(min_π AIR(δ_π, ν̄), min_π AIR(δ_π, ν_br))。
    间隙未达到容差时返回 gap_met=False 的结果。
    """
    config = config or SaddleConfig()
    rho_vec = _as_vector(rho, [phi.infoset_id for phi in tables.partition.infosets])
    objective = AIRObjective(tables, floor_rho(rho_vec, config.rho_floor), eta, mode)
    n_pol = objective.num_policies
    n_world = objective.num_world_points
    columns: List[np.ndarray] = [_normalize_log(np.asarray(c, dtype=float)) for c in (warm_columns or ())
                                 if len(c) == n_world][-config.max_warm_columns:]
    cheap = max(config.inner_iters // 4, 20)

    if not columns:
        log_weights = np.zeros(n_pol)
        prev = np.full(n_world, -math.log(n_world))
        for t in range(1, config.warm_start_iters + 1):
            p = softmax(log_weights)
            br = _ascent(objective, p, prev, config, max_iters=cheap)
            columns.append(br.log_nu)
            prev = br.log_nu
            log_weights -= math.sqrt(math.log(max(n_pol, 2)) / t) * objective.policy_values(br.log_nu)

    column_values = [objective.policy_values(c) for c in columns]
    best: Optional[Tuple[float, np.ndarray, WorldResponse, np.ndarray]] = None
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        p_hat, lam, _ = _solve_matrix_game(np.vstack(column_values))
        nu_bar = lam @ np.exp(np.vstack(columns))
        warm = columns[int(np.argmax(lam))]
        br = _ascent(objective, p_hat, warm, config)
        br_values = objective.policy_values(br.log_nu)
        with np.errstate(divide="ignore"):
            bar_values = objective.policy_values(np.log(nu_bar))
        upper = br.value + br.fw_gap
        lower = max(float(np.min(bar_values)), float(np.min(br_values)))
        gap = max(upper - lower, 0.0)
        logger.debug(f"主问题迭代 {iterations}: upper={upper:.8g}, lower={lower:.8g}, gap={gap:.3g}")
        if best is None or gap < best[0]:
            best = (gap, p_hat, br, nu_bar)
        if gap <= config.gap_tolerance:
            break
        columns.append(br.log_nu)
        column_values.append(br_values)

    gap, p_hat, br, nu_bar = best
    final = best_response_world(objective, p_hat, config, warm_start=br.log_nu)
    non_improvement = final.non_improvement
    if final.value > br.value:
        with np.errstate(divide="ignore"):
            lower = max(float(np.min(objective.policy_values(np.log(nu_bar)))),
                        float(np.min(objective.policy_values(final.log_nu))))
        gap = max(final.value + final.fw_gap - lower, 0.0)
        br = final
    gap_met = gap <= config.gap_tolerance
    if not gap_met:
        logger.warning(f"鞍点间隙未达到容差: gap={gap:.3g} > {config.gap_tolerance:.3g}")
    return SaddlePoint(
        p=policy_distribution(tables, p_hat),
        nu=world_distribution(tables, br.nu),
        air_value=float(br.value),
        gap=float(gap),
        iterations=iterations,
        gap_met=gap_met,
        nu_certificate=world_distribution(tables, nu_bar),
        non_improvement=non_improvement,
        columns=tuple(columns[-config.max_warm_columns:]) + (br.log_nu,),
    )


def optimistic_matrix(tables: DivergenceTables, rho: np.ndarray, eta: float, mode: DivergenceMode) -> np.ndarray:
    """A[π, ψ] = Σ_φ ρ_φ [V_φ(π_φ) − V_{M_ψ}(π) − D̄^π(φ‖M_ψ)/η]"""
    rho = np.asarray(rho, dtype=float)
    optimistic = rho @ tables.v_infoset                                   # (|Ψ|,)
    penalty = np.einsum("f,pfw->pw", rho, tables.dbar(mode))
    return optimistic[None, :] - tables.v_pol - penalty / eta


def solve_optimistic(tables: DivergenceTables, rho: Union[np.ndarray, DiscreteDistribution], eta: float,
                     mode: DivergenceMode, config: Optional[SaddleConfig] = None) -> SaddlePoint:
    """给定 ρ 的乐观 E2D 决策：min_p max_ν E_{π∼p, ψ∼ν} A[π, ψ]，线性规划精确求解"""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    config = config or SaddleConfig()
    rho_vec = _as_vector(rho, [phi.infoset_id for phi in tables.partition.infosets])
    A = optimistic_matrix(tables, rho_vec, eta, mode)
    p, nu, _ = _solve_matrix_game(A.T)
    gap = max(float(np.max(p @ A) - np.min(A @ nu)), 0.0)
    return SaddlePoint(
        p=policy_distribution(tables, p),
        nu=world_distribution(tables, nu),
        air_value=float(p @ A @ nu),
        gap=gap,
        iterations=1,
        gap_met=gap <= config.gap_tolerance,
        nu_certificate=world_distribution(tables, nu),
    )


def air_value(tables: DivergenceTables, p: Union[np.ndarray, DiscreteDistribution],
              nu: Union[np.ndarray, DiscreteDistribution], rho: Union[np.ndarray, DiscreteDistribution],
              eta: float, mode: DivergenceMode) -> Union[float, KLValue]:
    """精确计算 AIR(p, ν; ρ)

    Returns:
        实数；某个 p 支撑内的策略下 D 为无穷时返回 INFINITE_KL
    """
    p_vec = _as_vector(p, [pi.policy_id for pi in tables.policies])
    nu_vec = _as_vector(nu, [w.point_id for w in tables.partition.world_points])
    rho_vec = _as_vector(rho, [phi.infoset_id for phi in tables.partition.infosets])
    objective = AIRObjective(tables, rho_vec, eta, mode)
    values = objective.batch_policy_values(nu_vec[None, :])[0]
    support = p_vec > 0
    if np.any(np.isinf(values[support])):
        return INFINITE_KL
    return float(values[support] @ p_vec[support])


def nested_grid_value(tables: DivergenceTables, rho: np.ndarray, eta: float, mode: DivergenceMode,
                      p_resolution: float = 0.01, nu_resolution: float = 0.01, rho_floor: float = 1e-12) -> float:
    """p 网格 × ν 网格上的暴力 min_p max_ν"""
    objective = AIRObjective(tables, floor_rho(rho, rho_floor), eta, mode)
    nu_grid = simplex_grid(objective.num_world_points, nu_resolution)
    policy_values = np.vstack([objective.batch_policy_values(nu_grid[s:s + GRID_BATCH])
                               for s in range(0, len(nu_grid), GRID_BATCH)])   # (Nν, |Π|)
    p_grid = simplex_grid(objective.num_policies, p_resolution)
    best = math.inf
    for s in range(0, len(p_grid), 2000):
        worst = np.max(p_grid[s:s + 2000] @ policy_values.T, axis=1)
        best = min(best, float(np.min(worst)))
    return best


def _check_cap(tables: DivergenceTables, cap: int):
    if tables.num_infosets > cap:
        raise CapExceeded(tables.num_infosets, cap)


def estimate_digdec(tables: DivergenceTables, eta: float, mode: DivergenceMode,
                    config: Optional[SaddleConfig] = None, resolution: float = 0.05,
                    cap: int = DIGDEC_PHI_CAP) -> DigDecEstimate:
    """dig-dec ≈ max_{ρ∈网格} min_p max_ν AIR(p, ν; ρ)

    Raises:
        CapExceeded: |Φ| 超过 cap
    """
    _check_cap(tables, cap)
    config = config or SaddleConfig()
    best_value, best_rho, max_gap = -math.inf, None, 0.0
    columns = None
    for rho in simplex_grid(tables.num_infosets, resolution):
        saddle = solve_minimax(tables, rho, eta, mode, config, warm_columns=columns)
        columns = saddle.columns
        max_gap = max(max_gap, saddle.gap)
        if saddle.air_value > best_value:
            best_value, best_rho = saddle.air_value, rho
    logger.info(f"dig-dec 估计: η={eta}, mode={mode}, value={best_value:.6g}, max_gap={max_gap:.3g}")
    return DigDecEstimate(best_value, tuple(float(x) for x in best_rho), resolution, max_gap)


def estimate_odec(tables: DivergenceTables, eta: float, mode: DivergenceMode,
                  config: Optional[SaddleConfig] = None, resolution: float = 0.05,
                  cap: int = DIGDEC_PHI_CAP) -> DigDecEstimate:
    """o-dec ≈ max_{ρ∈网格} 乐观矩阵博弈的值"""
    _check_cap(tables, cap)
    best_value, best_rho, max_gap = -math.inf, None, 0.0
    for rho in simplex_grid(tables.num_infosets, resolution):
        saddle = solve_optimistic(tables, rho, eta, mode, config)
        max_gap = max(max_gap, saddle.gap)
        if saddle.air_value > best_value:
            best_value, best_rho = saddle.air_value, rho
    logger.info(f"o-dec 估计: η={eta}, mode={mode}, value={best_value:.6g}")
    return DigDecEstimate(best_value, tuple(float(x) for x in best_rho), resolution, max_gap)


def nested_grid_digdec(tables: DivergenceTables, eta: float, mode: DivergenceMode, rho_resolution: float = 0.05,
                       p_resolution: float = 0.01, nu_resolution: float = 0.01,
                       cap: int = DIGDEC_PHI_CAP) -> float:
    """三层网格 max_ρ min_p max_ν，用作 dig-dec 的独立复核"""
    _check_cap(tables, cap)
    return max(nested_grid_value(tables, rho, eta, mode, p_resolution, nu_resolution)
               for rho in simplex_grid(tables.num_infosets, rho_resolution))
