"""Price-response coordination by ADMM exchange.

Each round the coordinator broadcasts hourly prices and the last hourly
imbalance; generators and prosumers re-optimize against prices plus a
quadratic penalty pulling them towards ``previous - imbalance``; the
coordinator then updates prices and the penalty weight from the residuals.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .agents import (AdmmPenalty, Forecast, build_generator_problem, build_prosumer_problem, prosumer_values,
                     unwind_storage_losses)
from .coopt import restore_balance
from .dispatch import DispatchResult, rebalance_generators, system_cost
from .merit import merit_order_prices
from .qp import solve
from .runtime import DispatchReport, PriceBroadcast, Runtime, profile_report
from .scenario import Scenario


@dataclass
class AdmmConfig:
    rho0: float = 1.0
    primal_tol: float = 0.1
    dual_tol: float = 0.1
    max_iters: int = 1000
    tau_incr: float = 2.0
    tau_decr: float = 2.0
    mu_ratio: float = 10.0
    # flat value, full series, or None for the demand-weighted merit-order price
    lambda0: float | np.ndarray | None = None
    rebalance: bool = True
    threads: int | None = None

    def __post_init__(self):
        if self.primal_tol <= 0 or self.dual_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.rho0 <= 0:
            raise ValueError("rho0 must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class AdmmState:
    k: int
    prices: np.ndarray
    rho: float
    imbalance: np.ndarray
    dual_residual: float
    previous: dict[str, np.ndarray]


@dataclass
class TraceRow:
    iteration: int
    primal: float
    dual: float
    rho: float
    prices: np.ndarray
    imbalance: np.ndarray


@dataclass
class AdmmTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "primal", "dual", "rho"])
            for r in self.rows:
                w.writerow([r.iteration, repr(r.primal), repr(r.dual), repr(r.rho)])
        return path


def compute_imbalance(dispatch: Mapping[str, np.ndarray], agents: Sequence[str] | None = None) -> np.ndarray:
    """Hourly ``(sum g + sum p) / (N + 1)`` over all ``N`` reporting agents."""
    if agents is not None:
        missing = sorted(set(agents) - set(dispatch))
        if missing:
            raise KeyError(f"missing report from {missing[0]!r}")
    series = [np.asarray(v, dtype=float) for v in dispatch.values()]
    if not series:
        raise ValueError("no agent reports")
    return np.sum(series, axis=0) / (len(series) + 1)


def update_price(prices, rho: float, imbalance) -> np.ndarray:
    """Excess supply (positive imbalance) lowers the price, excess demand raises it."""
    return np.asarray(prices, dtype=float) - rho * np.asarray(imbalance, dtype=float)


def compute_dual_residual(generators: tuple[Mapping, Mapping], prosumers: tuple[Mapping, Mapping],
                          imbalance, previous_imbalance, rho: float) -> float:
    """``rho * (||d(g - I)|| + ||d(p - I)||)``, norms over all agents and hours of each group.

    ``generators`` and ``prosumers`` are ``(current, previous)`` dispatch maps.
    """
    I, I_prev = np.asarray(imbalance, dtype=float), np.asarray(previous_imbalance, dtype=float)
    total = 0.0
    for now, before in (generators, prosumers):
        if set(now) != set(before):
            raise KeyError("current and previous dispatch cover different agents")
        if not now:
            continue
        diff = np.concatenate([(np.asarray(now[a]) - I) - (np.asarray(before[a]) - I_prev) for a in sorted(now)])
        total += float(np.linalg.norm(diff))
    return rho * total


def adapt_penalty(rho: float, primal: float, dual: float, cfg: AdmmConfig) -> float:
    """Residual balancing: grow rho when the imbalance dominates, shrink it when the iterate drift does."""
    if rho <= 0:
        raise ValueError("rho must be > 0")
    if primal > cfg.mu_ratio * dual:
        return rho * cfg.tau_incr
    if dual > cfg.mu_ratio * primal:
        return rho / cfg.tau_decr
    return rho


def initial_prices(s: Scenario, cfg: AdmmConfig) -> np.ndarray:
    if cfg.lambda0 is not None:
        lam = np.asarray(cfg.lambda0, dtype=float)
        return np.full(s.horizon, float(lam)) if lam.ndim == 0 else lam.copy()
    demand = s.inflexible_demand()
    hourly = merit_order_prices(s.generators, demand, s.ceiling_price)
    w = demand.sum()
    flat = float(hourly @ demand / w) if w > 0 else float(hourly.mean())
    return np.full(s.horizon, flat)


def run_price_response(s: Scenario, cfg: AdmmConfig | None = None, runtime: Runtime | None = None) -> DispatchResult:
    cfg = cfg or AdmmConfig()
    own_runtime = runtime is None
    rt = runtime or Runtime(cfg.threads)
    T = s.horizon
    gen_ids = [g.id for g in s.generators]
    pro_ids = [j.id for j in s.prosumers]
    agents = gen_ids + pro_ids
    is_gen = set(gen_ids)
    t_start = time.perf_counter()

    lam = initial_prices(s, cfg)
    rho = cfg.rho0
    I_prev = np.zeros(T)
    prev: dict[str, np.ndarray] | None = None
    trace = AdmmTrace()
    converged = False
    values: dict[str, dict[str, np.ndarray]] = {}
    solves = 0

    def work(agent, env):
        msg: PriceBroadcast = env.payload
        previous = None if prev is None else prev[agent]
        if agent in is_gen:
            pen = None if previous is None else AdmmPenalty(msg.prices, msg.rho, previous, msg.imbalance)
            sol = solve(build_generator_problem(s.generator(agent), msg.prices, pen))
            if not sol.optimal:
                raise RuntimeError(f"generator subproblem {sol.status}")
            return DispatchReport(sol.value("g")), None
        mode = (Forecast(msg.prices) if previous is None
                else AdmmPenalty(msg.prices, msg.rho, previous, msg.imbalance))
        sol = solve(build_prosumer_problem(s, agent, mode))
        if not sol.optimal:
            raise RuntimeError(f"prosumer subproblem {sol.status}")
        return DispatchReport(sol.value("p")), prosumer_values(sol)

    try:
        for k in range(cfg.max_iters):
            reports = rt.execute_round(PriceBroadcast(lam, I_prev, rho), agents, work, phase="solve")
            solves += len(agents)
            now = {a: np.array(reports[a][0].series) for a in agents}
            values = {a: reports[a][1] for a in pro_ids}
            with rt.coordinator_phase("update"):
                I = compute_imbalance(now, agents)
                before = prev if prev is not None else {a: np.zeros(T) for a in agents}
                D = compute_dual_residual(
                    ({a: now[a] for a in gen_ids}, {a: before[a] for a in gen_ids}),
                    ({a: now[a] for a in pro_ids}, {a: before[a] for a in pro_ids}),
                    I, I_prev if prev is not None else np.zeros(T), rho)
                primal = float(np.mean(np.abs(I)))
                trace.rows.append(TraceRow(k, primal, D, rho, lam.copy(), I.copy()))
                prev, I_prev = now, I
                if primal <= cfg.primal_tol and D <= cfg.dual_tol:
                    converged = True
                    break
                lam = update_price(lam, rho, I)
                rho = adapt_penalty(rho, primal, D, cfg)
    finally:
        if own_runtime:
            rt.close()

    gens = {a: prev[a].copy() for a in gen_ids}
    res = DispatchResult("admm", gens, values, lam.copy(), converged=converged)
    raw_cost = system_cost(res, s)
    diag = {
        "iterations": len(trace), "solves": solves, "final_primal": trace.rows[-1].primal,
        "final_dual": trace.rows[-1].dual, "final_rho": trace.rows[-1].rho, "unbalanced_cost": raw_cost,
        "max_abs_unbalance": float(np.max(np.abs(res.imbalance()))), "rebalanced": False,
    }
    if cfg.rebalance:
        unwound = {a: unwind_storage_losses(s, s.prosumer(a), values[a]) for a in pro_ids}
        diag["unwound"] = sorted(a for a in pro_ids if unwound[a] is not values[a])
        res.prosumers = values = unwound
        net = np.sum([values[a]["p"] for a in pro_ids], axis=0) if pro_ids else np.zeros(T)
        g = rebalance_generators(s, net)
        if g is not None:
            res.generators = {a: g[i] for i, a in enumerate(gen_ids)}
            diag["rebalanced"] = True
        else:
            fixed = restore_balance(s, {a: values[a]["p"] for a in pro_ids})
            if fixed is not None:
                moved = {a: float(np.max(np.abs(fixed.prosumers[a]["p"] - values[a]["p"]))) for a in pro_ids}
                diag["repaired"] = sorted(a for a in pro_ids if moved[a] > 1e-6)
                res.generators, res.prosumers = fixed.generators, fixed.prosumers
                diag["rebalanced"] = True
    res.cost = system_cost(res, s)
    diag["wall_time"] = time.perf_counter() - t_start
    diag["trace"] = trace
    diag["events"] = rt.trace
    res.diagnostics = diag
    return res
