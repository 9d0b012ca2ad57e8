"""Centralized co-optimization of all agents in one QP."""
from __future__ import annotations

import time

import numpy as np

from .agents import THROUGHPUT_COST, Coopt, build_prosumer_problem, prosumer_values, unwind_storage_losses
from .dispatch import DispatchResult, rebalance_generators, system_cost
from .qp import Problem, solve
from .scenario import Scenario


class InfeasibleScenario(RuntimeError):
    def __init__(self, status, message=""):
        super().__init__(f"co-optimization {status}{': ' + message if message else ''}")
        self.status = status


def build_cooptimization(s: Scenario) -> Problem:
    T = s.horizon
    P = Problem("min", name="coopt")
    t = np.arange(T)
    cols = []
    for g in s.generators:
        cols.append(P.add_variables(f"{g.id}.g", T, g.g_min, g.g_max, cost=g.beta, quad=g.alpha))
    for j in s.prosumers:
        fams = P.embed(build_prosumer_problem(s, j, Coopt()), prefix=f"{j.id}.")
        cols.append(fams["p"])
    P.add_constraints("balance", np.tile(t, len(cols)), np.concatenate(cols), 1.0, 0.0, 0.0, n=T)
    return P


def solve_cooptimization(s: Scenario) -> DispatchResult:
    """Globally optimal dispatch; prices are the duals of the hourly balance."""
    t0 = time.perf_counter()
    P = build_cooptimization(s)
    t1 = time.perf_counter()
    sol = solve(P)
    t2 = time.perf_counter()
    if not sol.optimal:
        raise InfeasibleScenario(sol.status, sol.message)
    prosumers = {j.id: prosumer_values(sol, f"{j.id}.") for j in s.prosumers}
    throughput = sum(float(v[f].sum()) for v in prosumers.values() for f in v if f[:3] in ("ch:", "dc:"))
    res = DispatchResult(
        method="coopt",
        generators={g.id: sol.value(f"{g.id}.g").copy() for g in s.generators},
        prosumers=prosumers,
        prices=sol.dual("balance").copy(),
        diagnostics={"objective": sol.objective - THROUGHPUT_COST * throughput, "build_time": t1 - t0,
                     "solve_time": t2 - t1, "wall_time": t2 - t0, "solves": 1, "iterations": 1,
                     "n_vars": P.n_vars, "n_rows": P.n_rows},
    )
    # interior-point solutions may sit inside a flat optimal face that mixes charging and discharging
    unwound = {j.id: unwind_storage_losses(s, j, prosumers[j.id]) for j in s.prosumers}
    changed = [a for a in unwound if unwound[a] is not prosumers[a]]
    if changed:
        res.prosumers = unwound
        net = np.sum([v["p"] for v in unwound.values()], axis=0)
        g = rebalance_generators(s, net)
        if g is not None:
            res.generators = {gen.id: g[i] for i, gen in enumerate(s.generators)}
    res.diagnostics["unwound"] = changed
    res.cost = system_cost(res, s)
    return res


DEVIATION_COST = 1e4  # EUR/MW, dominates any energy price in the repair objective


def restore_balance(s: Scenario, reported: dict[str, np.ndarray]) -> DispatchResult | None:
    """Balanced dispatch closest (L1, hourly) to the reported prosumer net positions.

    Used when a decentralized schedule cannot be balanced by generators alone,
    e.g. a surplus in an hour where every generator sits at its minimum.
    Returns None if even the full system is infeasible.
    """
    T = s.horizon
    P = build_cooptimization(s)
    t = np.arange(T)
    for j in s.prosumers:
        up = P.add_variables(f"{j.id}.dev+", T, 0.0, cost=DEVIATION_COST)
        dn = P.add_variables(f"{j.id}.dev-", T, 0.0, cost=DEVIATION_COST)
        target = np.asarray(reported[j.id], dtype=float)
        P.add_constraints(f"{j.id}.track", np.tile(t, 3), np.concatenate([P.var(f"{j.id}.p"), up, dn]),
                          np.repeat([1.0, -1.0, 1.0], T), target, target, n=T)
    sol = solve(P)
    if not sol.optimal:
        return None
    prosumers = {}
    for j in s.prosumers:
        v = prosumer_values(sol, f"{j.id}.")
        prosumers[j.id] = {f: x for f, x in v.items() if not f.startswith(("dev+", "dev-"))}
        prosumers[j.id] = unwind_storage_losses(s, j, prosumers[j.id])
    gens = {g.id: sol.value(f"{g.id}.g").copy() for g in s.generators}
    net = np.sum([v["p"] for v in prosumers.values()], axis=0)
    g = rebalance_generators(s, net)
    if g is not None:
        gens = {gen.id: g[i] for i, gen in enumerate(s.generators)}
    return DispatchResult("repair", gens, prosumers, sol.dual("balance").copy())
