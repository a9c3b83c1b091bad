#!/usr/bin/env python3
"""
验收检查
逐条运行可复核的检查（编号 1-10），输出通过/失败表
"""

import logging
import math
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from src.agents import AgentConfig, RegretTrace, build_agent, run_episode_sequence
from src.bench import ExperimentConfig, build_tables, cmd_digdec, cmd_run, run_rng, write_csv_atomic
from src.divergences import DivergenceTables
from src.environments import Environment
from src.errors import NotComplete
from src.estimation import (
    bilevel_objective,
    bilevel_top_update,
    epoch_objective,
    epoch_posterior_update,
    split_product_loss,
)
from src.presets import make_bernoulli_bandit, make_hybrid_mdp, make_layered_mdp, make_toy_bandit
from src.saddle_solver import nested_grid_value, solve_minimax

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

CRITERIA = {
    "1": "toy separation: dig-dec E2D vs optimistic E2D",
    "2": "saddle certificate and grid brute force",
    "3": "closed-form posterior updates vs numeric simplex minimizer",
    "4": "dig-dec <= o-dec + eta",
    "5": "d_av <= d_sq pointwise and d_sq dual-form agreement",
    "6": "sublinear regret, stochastic layered MDP",
    "7": "sublinear regret, hybrid MDP",
    "8": "Est trends",
    "9": "epoch loss unbiasedness",
    "10": "determinism, normalization and regret ledger",
}

DIGDEC_SQ = AgentConfig(name="dig_dec_sq", decision="digdec", mode="sq", engine="bilevel", eta=1.0)
DIGDEC_AV = AgentConfig(name="dig_dec_av", decision="digdec", mode="av", engine="epoch", eta=1.0)
OPTIMISTIC = AgentConfig(name="optimistic", decision="optimistic", mode="sq", engine="bilevel", eta=1.0)

NORMALIZATION_TOL = 1e-9
CLOSED_FORM_TOL = 1e-7


@dataclass
class CriterionResult:
    criterion: str
    status: str
    detail: str

    @property
    def passed(self) -> bool:
        return self.status == "PASS"


@dataclass(frozen=True)
class VerifyPlan:
    """完整检查与快速检查的规模"""
    toy_T: int = 1024
    toy_T_long: int = 4096
    toy_seeds: int = 20
    digdec_seeds: int = 3
    regret_Ts: Tuple[int, ...] = (256, 1024, 4096)
    regret_seeds: int = 10
    hybrid_seeds: int = 5
    est_Ts: Tuple[int, int] = (512, 4096)
    est_plateau: Tuple[int, int] = (1024, 4096)
    closed_form_instances: int = 50
    unbiased_epochs: int = 100_000
    digdec_etas: Tuple[float, ...] = (0.5, 1.0, 2.0)
    digdec_resolution: float = 0.05
    nested: bool = True


FULL_PLAN = VerifyPlan()
QUICK_PLAN = VerifyPlan(
    toy_T=256,
    toy_T_long=1024,
    toy_seeds=10,
    digdec_seeds=1,
    regret_Ts=(64, 256, 1024),
    regret_seeds=3,
    hybrid_seeds=2,
    est_Ts=(128, 1024),
    est_plateau=(256, 1024),
    closed_form_instances=20,
    unbiased_epochs=10_000,
    digdec_etas=(1.0,),
    digdec_resolution=0.1,
    nested=False,
)


class VerifyContext:
    """缓存实例的散度表和已完成的运行，供多条检查共用"""

    def __init__(self, plan: VerifyPlan):
        self.plan = plan
        self._tables: Dict[str, DivergenceTables] = {}
        self._traces: Dict[Tuple[str, str, int, int], RegretTrace] = {}
        self.builders: Dict[str, Callable[[], Environment]] = {
            "toy": lambda: make_toy_bandit(T=plan.toy_T),
            "toy_long": lambda: make_toy_bandit(T=plan.toy_T_long),
            "layered": lambda: make_layered_mdp(bellman_complete=True),
            "layered_incomplete": lambda: make_layered_mdp(bellman_complete=False),
            "hybrid": lambda: make_hybrid_mdp(),
            "bernoulli_three": lambda: make_bernoulli_bandit([[0.7, 0.3], [0.3, 0.7], [0.5, 0.4]]),
            "bernoulli_two": lambda: make_bernoulli_bandit([[0.7, 0.3], [0.3, 0.7]]),
        }

    def tables(self, instance: str) -> DivergenceTables:
        if instance not in self._tables:
            self._tables[instance] = build_tables(self.builders[instance]())
        return self._tables[instance]

    def trace(self, instance: str, agent: AgentConfig, T: int, seed: int) -> RegretTrace:
        key = (instance, agent.name, T, seed)
        if key not in self._traces:
            tables = self.tables(instance)
            runner = build_agent(agent, tables, T)
            self._traces[key] = run_episode_sequence(runner, tables.env, T, run_rng(seed, agent.name))
        return self._traces[key]

    def traces(self, instance: str, agent: AgentConfig, T: int, seeds: int) -> List[RegretTrace]:
        return [self.trace(instance, agent, T, seed) for seed in range(1, seeds + 1)]

    def all_traces(self) -> List[Tuple[str, RegretTrace]]:
        return [(key[0], trace) for key, trace in self._traces.items()]


def _mean_regret(traces: Sequence[RegretTrace]) -> float:
    return float(np.mean([t.pseudo_regret.sum() for t in traces]))


def _est_at(trace: RegretTrace, rounds: int) -> float:
    return float(np.sum(trace.est_kl[:rounds]) + np.sum(trace.est_div[:rounds]))


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def check_toy_separation(ctx: VerifyContext) -> Tuple[bool, str]:
    plan = ctx.plan
    dig = ctx.traces("toy", DIGDEC_SQ, plan.toy_T, plan.digdec_seeds)
    first_a3 = min(t.logs[0].p_vector[2] for t in dig)
    dig_regret = _mean_regret(dig)
    opt = ctx.traces("toy", OPTIMISTIC, plan.toy_T, plan.toy_seeds)
    opt_long = ctx.traces("toy_long", OPTIMISTIC, plan.toy_T_long, plan.toy_seeds)
    max_a3 = max(float(log.p_vector[2]) for t in opt + opt_long for log in t.logs)
    opt_regret = _mean_regret(opt)
    ratio = _mean_regret(opt_long) / opt_regret if opt_regret > 0 else math.inf
    floor = math.sqrt(plan.toy_T) / 64.0
    ok = first_a3 >= 0.99 and dig_regret <= 1.0 and max_a3 <= 0.01 and opt_regret >= floor and 1.5 <= ratio <= 2.8
    detail = (f"dig-dec p1(a3)={first_a3:.4f} regret={dig_regret:.4f}; optimistic max p(a3)={max_a3:.2e} "
              f"regret={opt_regret:.4f} (floor {floor:.4f}) ratio={ratio:.3f}")
    return ok, detail


def check_saddle_certificate(ctx: VerifyContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(7)
    worst_gap, checked = 0.0, 0
    for instance in ("toy", "layered", "layered_incomplete", "bernoulli_three"):
        tables = ctx.tables(instance)
        if tables.num_world_points > 12:
            continue
        modes = ["none", "av", "sq"]
        try:
            tables.bellman_images()
        except NotComplete:
            modes.remove("sq")
        rhos = [np.full(tables.num_infosets, 1.0 / tables.num_infosets),
                rng.dirichlet(np.ones(tables.num_infosets))]
        for mode in modes:
            for rho in rhos:
                saddle = solve_minimax(tables, rho, 1.0, mode)
                worst_gap = max(worst_gap, saddle.gap)
                checked += 1

    tables = ctx.tables("bernoulli_two")
    worst_grid = 0.0
    for mode in ("none", "av", "sq"):
        for rho in (np.array([0.5, 0.5]), np.array([0.8, 0.2])):
            saddle = solve_minimax(tables, rho, 1.0, mode)
            brute = nested_grid_value(tables, rho, 1.0, mode, p_resolution=0.002, nu_resolution=0.002)
            worst_grid = max(worst_grid, abs(saddle.air_value - brute))
    ok = worst_gap <= 1e-4 and worst_grid <= 2e-3
    return ok, f"{checked} solves, max gap={worst_gap:.2e}; 2x2 grid max diff={worst_grid:.2e}"


def numeric_simplex_argmin(objective: Callable[[np.ndarray], float], dim: int) -> np.ndarray:
    """SLSQP 在概率单纯形上的数值最小化"""
    result = minimize(
        lambda x: objective(np.clip(x, 1e-300, None)),
        x0=np.full(dim, 1.0 / dim),
        method="SLSQP",
        bounds=[(1e-15, 1.0)] * dim,
        constraints=[{"type": "eq", "fun": lambda x: np.sum(x) - 1.0}],
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    return result.x / np.sum(result.x)


def check_closed_forms(ctx: VerifyContext) -> Tuple[bool, str]:
    """闭式解的目标值不高于数值最优解，且两者差不超过 1e-7"""
    rng = np.random.default_rng(11)
    worst = {"epoch": 0.0, "bilevel": 0.0}
    for _ in range(ctx.plan.closed_form_instances):
        dim = int(rng.integers(2, 5))
        tau = int(rng.integers(1, 4)) * 2
        rho_k = rng.dirichlet(np.ones(dim))
        posteriors = rng.dirichlet(np.ones(dim), size=tau)
        loss = rng.uniform(-1.0, 1.0, size=dim)
        gamma, beta = float(rng.uniform(0.05, 1.0)), float(rng.uniform(1.0, 10.0))
        closed = epoch_posterior_update(rho_k, posteriors, loss, gamma, beta)
        fn = lambda r: epoch_objective(r, rho_k, posteriors, loss, gamma, beta)
        numeric = numeric_simplex_argmin(fn, dim)
        worst["epoch"] = max(worst["epoch"], abs(fn(closed) - fn(numeric)))

        rho_t = rng.dirichlet(np.ones(dim))
        posterior = rng.dirichlet(np.ones(dim))
        bonus = rng.uniform(0.0, 2.0, size=dim)
        closed = bilevel_top_update(rho_t, posterior, loss, bonus, gamma)
        fn = lambda r: bilevel_objective(r, rho_t, posterior, loss, bonus, gamma)
        numeric = numeric_simplex_argmin(fn, dim)
        worst["bilevel"] = max(worst["bilevel"], abs(fn(closed) - fn(numeric)))
    ok = all(v <= CLOSED_FORM_TOL for v in worst.values())
    return ok, f"max objective diff epoch={worst['epoch']:.2e}, bilevel={worst['bilevel']:.2e}"


def check_digdec_bound(ctx: VerifyContext) -> Tuple[bool, str]:
    plan = ctx.plan
    frame = cmd_digdec(["toy_separation", "toy_coarse", "bernoulli_three"], plan.digdec_etas, ["av", "sq"],
                       resolution=plan.digdec_resolution, nested=plan.nested)
    failed = frame[~frame["bound_ok"]]
    detail = f"{len(frame)} rows, {len(failed)} violations"
    if len(failed):
        row = failed.iloc[0]
        detail += f" (first: {row['instance']} eta={row['eta']} mode={row['mode']} " \
                  f"digdec={row['digdec']:.4g} odec={row['odec']:.4g})"
    return len(failed) == 0, detail


def divergence_ordering(tables: DivergenceTables) -> Tuple[bool, float]:
    """d_av ≤ s · d_sq 在全部 (π, φ, M) 上是否成立，以及最大违反量

    s = (B_sq / B_av)²：随机设定为 1；混合设定两种散度的 B 不同，s = d。
    """
    scale = tables.spec.ordering_scale
    excess = float(np.max(tables.model_dbar("av") - scale * tables.model_dbar("sq")))
    return excess <= 1e-12, max(excess, 0.0)


def check_divergence_ordering(ctx: VerifyContext) -> Tuple[bool, str]:
    details, ok = [], True
    for instance in ("layered", "toy", "hybrid"):
        tables = ctx.tables(instance)
        ordered, excess = divergence_ordering(tables)
        dual_gap = tables.dual_form_gap()
        ok = ok and ordered and dual_gap <= 1e-9
        scale = tables.spec.ordering_scale
        details.append(f"{instance}: max(d_av-{scale:g}*d_sq)={excess:.2e}, dual gap={dual_gap:.2e}")
    return ok, "; ".join(details)


def check_stochastic_regret(ctx: VerifyContext) -> Tuple[bool, str]:
    plan = ctx.plan
    details, ok = [], True
    for agent in (DIGDEC_AV, DIGDEC_SQ):
        averages = [_mean_regret(ctx.traces("layered", agent, T, plan.regret_seeds)) / T for T in plan.regret_Ts]
        ok = ok and _strictly_decreasing(averages)
        details.append(f"{agent.name}: " + ", ".join(f"{a:.4g}" for a in averages))
    return ok, "Reg_T/T " + "; ".join(details)


def check_hybrid_regret(ctx: VerifyContext) -> Tuple[bool, str]:
    plan = ctx.plan
    averages = [_mean_regret(ctx.traces("hybrid", DIGDEC_AV, T, plan.hybrid_seeds)) / T for T in plan.regret_Ts]
    return _strictly_decreasing(averages), "Reg_T/T " + ", ".join(f"{a:.4g}" for a in averages)


def check_est_trends(ctx: VerifyContext) -> Tuple[bool, str]:
    plan = ctx.plan
    mid, end = plan.est_plateau
    long_runs = ctx.traces("layered", DIGDEC_SQ, end, plan.regret_seeds)
    est_mid = float(np.mean([_est_at(t, mid) for t in long_runs]))
    est_end = float(np.mean([_est_at(t, end) for t in long_runs]))
    plateau_ok = est_end <= 1.5 * est_mid

    short, long = plan.est_Ts
    scaled = []
    for T in (short, long):
        runs = ctx.traces("layered", DIGDEC_AV, T, plan.regret_seeds)
        scaled.append(float(np.mean([_est_at(t, T) for t in runs])) / T ** (1.0 / 3.0))
    trend_ok = scaled[0] > 0 and scaled[1] > 0 and 1.0 / 3.0 <= scaled[1] / scaled[0] <= 3.0
    detail = (f"bilevel Est({mid})={est_mid:.4g}, Est({end})={est_end:.4g}; "
              f"epoch Est/T^(1/3) at T={short}: {scaled[0]:.4g}, T={long}: {scaled[1]:.4g}")
    return plateau_ok and trend_ok, detail


def epoch_loss_target(tables: DivergenceTables, policy_index: int, model_index: int, tau: int) -> np.ndarray:
    """E[L_k(φ)] = τ · normalizer · Σ_h Σ_j (E[ℓ_h(φ)_j])²，两半段独立"""
    lik = tables.likelihoods[policy_index][model_index]
    mean_ell = np.einsum("o,ofhn->fhn", lik, tables.ell[policy_index])
    return tau * tables.spec.normalizer * np.sum(mean_ell ** 2, axis=(1, 2))


def check_epoch_unbiased(ctx: VerifyContext, tau: int = 4) -> Tuple[bool, str]:
    tables = ctx.tables("layered")
    env = tables.env
    policy_index, model_index = 0, env.model_index(env.true_model_id)
    lik = tables.likelihoods[policy_index][model_index]
    rng = np.random.Generator(np.random.PCG64(2024))
    n = ctx.plan.unbiased_epochs
    draws = rng.choice(len(lik), size=(n, tau), p=lik / lik.sum())
    ell = tables.ell[policy_index]
    losses = np.array([split_product_loss(ell[row], tables.spec.normalizer) for row in draws])
    target = epoch_loss_target(tables, policy_index, model_index, tau)
    mean = losses.mean(axis=0)
    se = losses.std(axis=0, ddof=1) / math.sqrt(n)
    z = np.abs(mean - target) / np.maximum(se, 1e-15)
    return bool(np.all(np.abs(mean - target) <= 4 * se + 1e-12)), f"{n} epochs, max |z|={float(np.max(z)):.3f}"


def trace_normalization(trace: RegretTrace) -> float:
    """运行中所有分布向量的最大归一化偏差"""
    worst = 0.0
    for log in trace.logs:
        for vector in (log.p_vector, log.rho, log.nu_vector):
            worst = max(worst, abs(float(np.sum(vector)) - 1.0))
    return worst


def _run_bytes(output_dir: Path) -> Dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(output_dir.glob("*.csv"))}


def check_determinism(ctx: VerifyContext) -> Tuple[bool, str]:
    agents = [replace(DIGDEC_SQ), replace(OPTIMISTIC)]
    with tempfile.TemporaryDirectory() as tmp:
        outputs = []
        for label in ("a", "b"):
            config = ExperimentConfig(name="determinism", environment="toy_separation", T=64, seeds=[1, 2],
                                      output_dir=str(Path(tmp) / label), summary=False)
            cmd_run(config, agents)
            outputs.append(_run_bytes(Path(tmp) / label))
    identical = outputs[0] == outputs[1] and len(outputs[0]) > 0

    worst_norm, ledger_failures, stochastic = 0.0, 0, 0
    for instance, trace in ctx.all_traces():
        worst_norm = max(worst_norm, trace_normalization(trace))
        if ctx.tables(instance).env.kind != "hybrid_mdp":
            stochastic += 1
            ok, _, _ = trace.ledger()
            ledger_failures += 0 if ok else 1
    ok = identical and worst_norm <= NORMALIZATION_TOL and ledger_failures == 0
    return ok, (f"byte-identical={identical}; max normalization error={worst_norm:.2e}; "
                f"ledger failures {ledger_failures}/{stochastic}")


CHECKS: Dict[str, Callable[[VerifyContext], Tuple[bool, str]]] = {
    "1": check_toy_separation,
    "2": check_saddle_certificate,
    "3": check_closed_forms,
    "4": check_digdec_bound,
    "5": check_divergence_ordering,
    "6": check_stochastic_regret,
    "7": check_hybrid_regret,
    "8": check_est_trends,
    "9": check_epoch_unbiased,
    "10": check_determinism,
}


def run_criterion(criterion: str, ctx: VerifyContext) -> CriterionResult:
    try:
        ok, detail = CHECKS[criterion](ctx)
    except Exception as e:
        logger.exception(f"检查 {criterion} 出错")
        return CriterionResult(criterion, "FAIL", f"error: {type(e).__name__}: {e}")
    return CriterionResult(criterion, "PASS" if ok else "FAIL", detail)


def cmd_verify(quick: bool = False, output_dir: Optional[Path] = None,
               criteria: Optional[Sequence[str]] = None) -> List[CriterionResult]:
    """运行检查并写出 verify.csv（criterion,status,detail）

    检查 10 复用前面检查的运行，所以总是最后执行。
    """
    ctx = VerifyContext(QUICK_PLAN if quick else FULL_PLAN)
    selected = list(criteria or CRITERIA)
    unknown = [c for c in selected if c not in CHECKS]
    if unknown:
        raise ValueError(f"unknown criteria {unknown}; known: {list(CHECKS)}")
    results = []
    for criterion in sorted(selected, key=int):
        logger.info(f"检查 {criterion}: {CRITERIA[criterion]}")
        result = run_criterion(criterion, ctx)
        logger.info(f"{'✅' if result.passed else '❌'} {criterion}: {result.detail}")
        results.append(result)
    if output_dir is not None:
        frame = pd.DataFrame([(r.criterion, r.status, r.detail) for r in results],
                             columns=["criterion", "status", "detail"])
        write_csv_atomic(frame, Path(output_dir) / "verify.csv")
    return results


def format_report(results: Sequence[CriterionResult]) -> str:
    width = max(len(CRITERIA[r.criterion]) for r in results) if results else 0
    lines = [f"{'id':>3}  {'status':<6}  {'criterion':<{width}}  detail"]
    for r in results:
        lines.append(f"{r.criterion:>3}  {r.status:<6}  {CRITERIA[r.criterion]:<{width}}  {r.detail}")
    return "\n".join(lines)
