"""Per-agent optimization problems shared by all coordinators.

Prosumer variable families (one entry per hour of the window):

========================  =====================================================
``p``                     net electric power, + for net injection
``x:<conv>``              purchased input carrier of a converter
``con:<conv>``            grid electricity drawn by a P2X converter
``gen:<conv>``            electricity produced by an X2P converter
``out:<conv>``            heat/hydrogen produced by a P2X/X2X converter
``heat:<conv>``           co-produced heat of a CHP
``ch:<r>``, ``dc:<r>``    storage charge/discharge of carrier r
``soc:<r>``               storage energy at the end of the hour
``flex:<r>``              flexible demand served in the hour
``flexe:<r>``             cumulative flexible energy at the end of the hour
``qst``                   solar thermal heat
========================  =====================================================
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qp import INF, Problem, Solution, solve
from .scenario import LOCAL_CARRIERS, Carrier, GeneratorSpec, ProsumerSpec, Scenario, ScenarioError

E = Carrier.ELECTRICITY

#: EUR/MWh on storage charge and discharge; breaks ties that would otherwise let
#: an interior-point solver charge and discharge at once when stored energy is worthless
THROUGHPUT_COST = 1e-3


class HorizonMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Coopt:
    """Cost terms only; the price enters through the system balance."""


@dataclass(frozen=True)
class Forecast:
    prices: np.ndarray


@dataclass(frozen=True)
class AdmmPenalty:
    """Price term plus ``rho/2 * ||p - (previous - imbalance)||**2``."""

    prices: np.ndarray
    rho: float
    previous: np.ndarray
    imbalance: np.ndarray | float = 0.0


@dataclass
class Window:
    """A slice ``[start, start + length)`` of the horizon plus initial energies."""

    start: int = 0
    length: int | None = None
    storage_energy: dict[Carrier, float] = field(default_factory=dict)
    flex_energy: dict[Carrier, float] = field(default_factory=dict)

    def resolve(self, T: int) -> tuple[int, int]:
        L = T - self.start if self.length is None else self.length
        if self.start < 0 or L < 1 or self.start + L > T:
            raise HorizonMismatch(f"window [{self.start}, {self.start + L}) outside horizon {T}")
        return self.start, L


def _price_vector(v, L, what):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return np.full(L, float(a))
    if a.shape != (L,):
        raise HorizonMismatch(f"{what} has length {a.shape[0] if a.ndim else 0}, expected {L}")
    return a


def _objective_terms(mode, L):
    """(linear coefficient on p, quadratic coefficient on p, constant)."""
    if isinstance(mode, Coopt):
        return np.zeros(L), np.zeros(L), 0.0
    if isinstance(mode, Forecast):
        return -_price_vector(mode.prices, L, "price forecast"), np.zeros(L), 0.0
    if isinstance(mode, AdmmPenalty):
        lam = _price_vector(mode.prices, L, "price series")
        prev = np.asarray(mode.previous, dtype=float)
        if prev.shape != (L,):
            raise HorizonMismatch(f"previous dispatch has length {prev.size}, expected {L}")
        target = prev - _price_vector(mode.imbalance, L, "imbalance")
        rho = float(mode.rho)
        return -lam - rho * target, np.full(L, rho / 2), float(rho / 2 * target @ target)
    raise TypeError(f"unknown objective mode {mode!r}")


def build_prosumer_problem(s: Scenario, j: ProsumerSpec | str, mode, window: Window | None = None) -> Problem:
    """Prosumer dispatch problem over ``window`` (default: full horizon)."""
    if isinstance(j, str):
        j = s.prosumer(j)
    window = window or Window()
    t0, L = window.resolve(s.horizon)
    sl = slice(t0, t0 + L)
    last_hour_inside = t0 + L == s.horizon
    lin_p, quad_p, const = _objective_terms(mode, L)

    P = Problem("min", name=j.id)
    P.constant = const
    t = np.arange(L)
    p = P.add_variables("p", L, -INF, INF, cost=lin_p, quad=quad_p)

    # electric balance terms: p - sum(gen) - dc + sum(con) + ch + flex = -base
    net_cols, net_vals = [p], [np.ones(L)]
    produced: dict[Carrier, list[np.ndarray]] = {r: [] for r in LOCAL_CARRIERS}

    for c in j.converters:
        if c.uses_electricity:
            inp = P.add_variables(f"con:{c.id}", L, 0.0, c.capacity)
            net_cols.append(inp)
            net_vals.append(np.ones(L))
        else:
            try:
                mu = s.price(c.input_carrier)[sl]
            except ScenarioError:
                raise ScenarioError(f"prosumer {j.id} converter {c.id}: unknown carrier reference "
                                    f"{c.input_carrier.value!r}") from None
            inp = P.add_variables(f"x:{c.id}", L, 0.0, c.capacity, cost=mu)
        if c.is_x2p:
            gen = P.add_variables(f"gen:{c.id}", L, 0.0, INF)
            P.add_constraints(f"conv:{c.id}", np.r_[t, t], np.r_[gen, inp],
                              np.r_[np.ones(L), -c.efficiency_electric * np.ones(L)], 0.0, 0.0, n=L)
            net_cols.append(gen)
            net_vals.append(-np.ones(L))
            if c.produces_heat:
                hq = P.add_variables(f"heat:{c.id}", L, 0.0, INF)
                P.add_constraints(f"chpheat:{c.id}", np.r_[t, t], np.r_[hq, inp],
                                  np.r_[np.ones(L), -c.efficiency_nonelectric * np.ones(L)], 0.0, 0.0, n=L)
                produced[Carrier.HEAT].append(hq)
        else:
            out = P.add_variables(f"out:{c.id}", L, 0.0, INF)
            P.add_constraints(f"conv:{c.id}", np.r_[t, t], np.r_[out, inp],
                              np.r_[np.ones(L), -c.efficiency_nonelectric * np.ones(L)], 0.0, 0.0, n=L)
            produced[c.output_carrier].append(out)

    storage_terms: dict[Carrier, tuple[np.ndarray, np.ndarray]] = {}
    for st in j.storages:
        r = st.carrier
        ch = P.add_variables(f"ch:{r.value}", L, 0.0, st.power_cap, cost=THROUGHPUT_COST)
        dc = P.add_variables(f"dc:{r.value}", L, 0.0, st.power_cap, cost=THROUGHPUT_COST)
        soc = P.add_variables(f"soc:{r.value}", L, st.e_min, st.e_max)
        e_init = window.storage_energy.get(r, st.e0)
        rows = np.r_[t, t[1:], t, t]
        cols = np.r_[soc, soc[:-1], ch, dc]
        vals = np.r_[np.ones(L), -np.ones(L - 1), -st.eff_charge * np.ones(L), np.ones(L) / st.eff_discharge]
        rhs = np.zeros(L)
        rhs[0] = e_init
        P.add_constraints(f"socdyn:{r.value}", rows, cols, vals, rhs, rhs, n=L)
        storage_terms[r] = (ch, dc)

    flex_cols: dict[Carrier, np.ndarray] = {}
    base: dict[Carrier, np.ndarray] = {}
    for d in j.demands:
        r = d.carrier
        base[r] = d.base[sl]
        if not d.flexible:
            continue
        lo, hi = d.flex_min[sl].copy(), d.flex_max[sl].copy()
        if last_hour_inside:
            lo[-1] = hi[-1] = d.flex_total
        f = P.add_variables(f"flex:{r.value}", L, -INF, INF)
        fe = P.add_variables(f"flexe:{r.value}", L, lo, hi)
        rhs = np.zeros(L)
        rhs[0] = window.flex_energy.get(r, 0.0)
        P.add_constraints(f"flexdyn:{r.value}", np.r_[t, t[1:], t], np.r_[fe, fe[:-1], f],
                          np.r_[np.ones(L), -np.ones(L - 1), -np.ones(L)], rhs, rhs, n=L)
        flex_cols[r] = f

    if E in storage_terms:
        ch, dc = storage_terms[E]
        net_cols += [ch, dc]
        net_vals += [np.ones(L), -np.ones(L)]
    if E in flex_cols:
        net_cols.append(flex_cols[E])
        net_vals.append(np.ones(L))
    rhs = -base.get(E, np.zeros(L))
    P.add_constraints("net", np.tile(t, len(net_cols)), np.concatenate(net_cols), np.concatenate(net_vals),
                      rhs, rhs, n=L)

    if j.solar_thermal_max is not None:
        produced[Carrier.HEAT].append(P.add_variables("qst", L, 0.0, j.solar_thermal_max[sl]))

    for r in j.local_carriers():
        cols = list(produced[r])
        vals = [np.ones(L)] * len(cols)
        if r in storage_terms:
            ch, dc = storage_terms[r]
            cols += [dc, ch]
            vals += [np.ones(L), -np.ones(L)]
        if r in flex_cols:
            cols.append(flex_cols[r])
            vals.append(-np.ones(L))
        rhs = base.get(r, np.zeros(L))
        if not cols:
            cols, vals = [np.zeros(0, int)], [np.zeros(0)]
        P.add_constraints(f"bal:{r.value}", np.concatenate([t[: len(c)] for c in cols]), np.concatenate(cols),
                          np.concatenate(vals), rhs, rhs, n=L)
    return P


def build_generator_problem(gen: GeneratorSpec, prices, penalty: AdmmPenalty | None = None,
                            window: Window | None = None) -> Problem:
    """Revenue maximization ``sum((price - (alpha g + beta)) g)`` within availability limits."""
    T = len(gen.g_max)
    t0, L = (window or Window()).resolve(T)
    lam = _price_vector(prices, L, "price series")
    P = Problem("max", name=gen.id)
    lin, quad = lam - gen.beta, np.full(L, -gen.alpha)
    if penalty is not None:
        prev = np.asarray(penalty.previous, dtype=float)
        if prev.shape != (L,):
            raise HorizonMismatch(f"previous dispatch has length {prev.size}, expected {L}")
        target = prev - _price_vector(penalty.imbalance, L, "imbalance")
        rho = float(penalty.rho)
        lin = lin + rho * target
        quad = quad - rho / 2
        P.constant = -rho / 2 * float(target @ target)
    P.add_variables("g", L, gen.g_min[t0:t0 + L], gen.g_max[t0:t0 + L], cost=lin, quad=quad)
    return P


def net_power_of(sol: Solution, agent: str | None = None) -> np.ndarray:
    """Net injection of an agent: ``p`` for prosumers, ``g`` for generators."""
    if not sol.optimal:
        raise ValueError(f"solution is {sol.status}")
    prefix = f"{agent}." if agent else ""
    for fam in ("p", "g"):
        if sol.problem.has_var(prefix + fam):
            return sol.value(prefix + fam).copy()
    if agent and sol.problem.name == agent:
        return net_power_of(sol)
    raise KeyError(f"no net power family for agent {agent!r}")


def prosumer_values(sol: Solution, prefix: str = "") -> dict[str, np.ndarray]:
    """All variable families of one prosumer, with ``prefix`` stripped."""
    n = len(prefix)
    return {fam[n:]: sol.x[idx].copy() for fam, idx in sol.problem._var_families.items() if fam.startswith(prefix)}


def simultaneous_storage_use(j: ProsumerSpec, values: dict[str, np.ndarray]) -> float:
    """Largest ``min(charge, discharge)`` over the prosumer's storages and hours."""
    worst = 0.0
    for st in j.storages:
        r = st.carrier.value
        worst = max(worst, float(np.max(np.minimum(values[f"ch:{r}"], values[f"dc:{r}"]), initial=0.0)))
    return worst


def unwind_storage_losses(s: Scenario, j: ProsumerSpec, values: dict[str, np.ndarray],
                          tol: float = 1e-9) -> dict[str, np.ndarray]:
    """Remove charging and discharging in the same hour where it only burns energy.

    Re-solves the full-horizon prosumer problem for minimum storage throughput
    with every converter input capped at its reported value and net injection
    not below the reported one. The reported dispatch is feasible for this LP,
    so the result never buys more and never needs more generation. Returns
    ``values`` unchanged if there is nothing to unwind.
    """
    if simultaneous_storage_use(j, values) <= tol:
        return values
    P = build_prosumer_problem(s, j, Coopt())
    for c in j.converters:
        fam = f"con:{c.id}" if c.uses_electricity else f"x:{c.id}"
        for i, v in zip(P.var(fam), values[fam]):
            P.set_bounds(i, 0.0, min(c.capacity, max(float(v), 0.0)))
    if j.solar_thermal_max is not None:
        for i, v, hi in zip(P.var("qst"), values["qst"], j.solar_thermal_max):
            P.set_bounds(i, 0.0, min(float(hi), max(float(v), 0.0)))
    for i, v in zip(P.var("p"), values["p"]):
        P.set_bounds(i, float(v) - 1e-7, INF)
    for st in j.storages:
        r = st.carrier.value
        P.add_objective(P.var(f"ch:{r}"), 1.0)
        P.add_objective(P.var(f"dc:{r}"), 1.0)
    sol = solve(P)
    if not sol.optimal:
        return values
    return prosumer_values(sol)
