"""Rolling hourly market clearing with forecast-driven prosumer bids.

Every hour each prosumer turns its look-ahead optimization into a bid curve,
the market clears the curves against truthful generator supply, and each
prosumer then commits its first hour at the cleared quantity and rolls its
storage and flexible-demand energies forward.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .agents import Forecast, Window, build_prosumer_problem
from .dispatch import DispatchResult, system_cost
from .merit import merit_order_price
from .qp import CostSweep, Problem, solve
from .runtime import BidSubmission, ClearingNotice, Runtime
from .scenario import Carrier, GeneratorSpec, ProsumerSpec, Scenario

ENVELOPE_TOL = 1e-6
# prices closer than this (relative) are one breakpoint reached along different rounding paths
PRICE_TIE = 1e-9


def same_price(a: float, b: float) -> bool:
    return abs(a - b) <= PRICE_TIE * max(1.0, abs(a), abs(b))


class AuctionError(RuntimeError):
    pass


class ClearingInfeasible(AuctionError):
    def __init__(self, hour: int, message: str):
        super().__init__(f"market clearing infeasible at hour {hour}: {message}")
        self.hour = hour


class StateError(AuctionError):
    """A committed dispatch left a storage or flexible-demand envelope."""


@dataclass(frozen=True)
class BidBlock:
    price: float
    quantity: float  # < 0 demand, > 0 supply


@dataclass(frozen=True)
class BidCurve:
    """Blocks of one prosumer for one hour, plus the probed step response they encode.

    ``base`` is the response below the first step; each step is
    ``(price, response just above price)``.
    """

    prosumer: str
    hour: int
    blocks: tuple[BidBlock, ...]
    base: float = 0.0
    steps: tuple[tuple[float, float], ...] = ()

    def response(self, price: float) -> tuple[float, float]:
        """Range of net injection the blocks accept at ``price``; a point unless a block is marginal."""
        lo = hi = 0.0
        for b in self.blocks:
            tie = same_price(price, b.price)
            if b.quantity < 0:
                if tie:
                    lo += b.quantity
                elif price < b.price:
                    lo += b.quantity
                    hi += b.quantity
            else:
                if tie:
                    hi += b.quantity
                elif price > b.price:
                    lo += b.quantity
                    hi += b.quantity
        return lo, hi

    def is_monotone(self, tol: float = 1e-9) -> bool:
        """Net injection never falls as the price rises (net consumption never rises)."""
        levels = [self.base] + [r for _, r in self.steps]
        prices = [p for p, _ in self.steps]
        return (all(b >= a - tol for a, b in zip(levels, levels[1:]))
                and all(q > p for p, q in zip(prices, prices[1:])))


@dataclass
class ClearingResult:
    hour: int
    status: str
    price: float = np.nan
    accepted: dict[str, np.ndarray] = field(default_factory=dict)
    generation: dict[str, float] = field(default_factory=dict)
    welfare: float = np.nan
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def net(self, prosumer: str) -> float:
        return float(np.sum(self.accepted.get(prosumer, 0.0)))

    def imbalance(self) -> float:
        return sum(self.generation.values()) + sum(float(a.sum()) for a in self.accepted.values())


@dataclass(frozen=True)
class SatelliteState:
    prosumer: str
    hour: int
    storage_energy: Mapping[Carrier, float]
    flex_energy: Mapping[Carrier, float]
    forecast: np.ndarray | None = None


@dataclass(frozen=True)
class Commitment:
    """First-hour asset dispatch a prosumer commits to after clearing."""

    prosumer: str
    hour: int
    price: float
    values: Mapping[str, float]


@dataclass
class AuctionConfig:
    lookahead: int = 24
    clearing_window: int = 1
    # look-ahead range per storage / flexible demand; None = whole window
    flex_range: int | None = None
    # how converter opportunity prices combine carrier price and efficiency: "multiply" or "divide"
    opportunity: str = "multiply"
    # add the exact response breakpoints of the prosumer's look-ahead problem to the probe prices
    refine: bool = True
    threads: int | None = None
    keep_curves: bool = True

    def __post_init__(self):
        if self.lookahead < 1:
            raise ValueError("lookahead must be >= 1")
        if self.clearing_window != 1:
            raise ValueError(
                f"clearing window of {self.clearing_window} h requested; only 1 h windows are supported "
                "(multi-hour windows need indivisible block bids)")
        if self.opportunity not in ("multiply", "divide"):
            raise ValueError(f"opportunity must be 'multiply' or 'divide', got {self.opportunity!r}")


def initial_state(j: ProsumerSpec) -> SatelliteState:
    return SatelliteState(
        j.id, 0,
        {st.carrier: float(st.e0) for st in j.storages},
        {d.carrier: 0.0 for d in j.demands if d.flexible},
    )


def make_price_forecast(history: Sequence[float], s: Scenario, t: int, lookahead: int) -> np.ndarray:
    """Prices for hours ``t .. t+L-1`` with ``L = min(lookahead, T - t)``.

    An hour whose same hour a day earlier has cleared takes that price;
    any other hour gets the merit-order price of its inflexible electric demand.
    """
    if lookahead < 1:
        raise ValueError("lookahead must be >= 1")
    L = min(lookahead, s.horizon - t)
    if L < 1:
        raise ValueError(f"hour {t} outside horizon {s.horizon}")
    demand = s.inflexible_demand()
    out = np.empty(L)
    for h in range(L):
        tau = t + h
        if 0 <= tau - 24 < len(history):
            out[h] = history[tau - 24]
        else:
            out[h] = merit_order_price(s.generators, float(demand[tau]), tau, s.ceiling_price)
    return out


def _opportunity_efficiency(c) -> float:
    if c.efficiency_nonelectric > 0:
        return c.efficiency_nonelectric
    return c.efficiency_electric


def gather_bid_prices(s: Scenario, j: ProsumerSpec | str, forecast, t: int, *, flex_range: int | None = None,
                      opportunity: str = "multiply") -> np.ndarray:
    """Ceiling, the cheapest forecast price within reach of each flexibility, and converter opportunity prices."""
    if isinstance(j, str):
        j = s.prosumer(j)
    fc = np.asarray(forecast, dtype=float)
    if fc.size == 0:
        raise ValueError("empty forecast")
    C = s.ceiling_price
    prices = {float(C)}
    n_flex = len(j.storages) + sum(1 for d in j.demands if d.flexible)
    if n_flex:
        f = fc.size - 1 if flex_range is None else min(flex_range, fc.size - 1)
        prices.add(float(fc[: f + 1].min()))
    for c in j.converters:
        if c.uses_electricity:
            continue
        mu = float(s.price(c.input_carrier)[t])
        n = _opportunity_efficiency(c)
        prices.add(mu * n if opportunity == "multiply" else mu / n)
    return np.array(sorted(min(max(p, -C), C) for p in prices))


def _window_problem(s: Scenario, j: ProsumerSpec, state: SatelliteState, forecast: np.ndarray) -> Problem:
    w = Window(state.hour, len(forecast), dict(state.storage_energy), dict(state.flex_energy))
    return build_prosumer_problem(s, j, Forecast(forecast), w)


def _blocks_from_steps(r0: float, steps: Sequence[tuple[float, float]], ceiling: float) -> tuple[BidBlock, ...]:
    """Blocks reproducing a step response: ``r0`` below the first step, then ``r`` above each price."""
    blocks = []
    # a falling step cannot be expressed by demand/supply blocks; it is held at the running maximum
    levels = list(np.maximum.accumulate([r0] + [r for _, r in steps]))
    if levels[-1] < 0:
        blocks.append(BidBlock(float(ceiling), float(levels[-1])))
    if r0 > 0:
        blocks.append(BidBlock(-float(ceiling), float(r0)))
    prev = r0
    for (price, _), r in zip(steps, levels[1:]):
        d = min(r, 0.0) - min(prev, 0.0)
        sup = max(r, 0.0) - max(prev, 0.0)
        if d > 0:
            blocks.append(BidBlock(float(price), -float(d)))
        if sup > 0:
            blocks.append(BidBlock(float(price), float(sup)))
        prev = r
    return tuple(sorted(blocks, key=lambda b: (b.price, b.quantity)))


def _response_walk(sweep: CostSweep, col: int, ceiling: float, max_steps: int = 1000):
    """Exact step response of ``p[0]`` to its price over ``(-ceiling, ceiling)`` via cost ranging."""
    x = sweep.solve(ceiling)
    if x is None:
        raise AuctionError("look-ahead problem not solvable")
    r0 = r = float(x[col])
    steps = []
    for _ in range(max_steps):
        lo_cost, _ = sweep.cost_range()
        b = -lo_cost
        if b >= ceiling:
            break
        nxt = b + max(1e-6, 1e-9 * abs(b))
        x = sweep.solve(-nxt)
        if x is None:
            raise AuctionError("look-ahead problem not solvable")
        rn = float(x[col])
        if abs(rn - r) > 1e-9:
            steps.append((b, rn))
            r = rn
    else:
        raise AuctionError("response walk did not terminate")
    return r0, steps


def generate_bid_curve(s: Scenario, j: ProsumerSpec | str, state: SatelliteState, prices, forecast,
                       refine: bool = True) -> BidCurve:
    """Probe the look-ahead problem at each candidate price for the current hour and encode the responses."""
    if isinstance(j, str):
        j = s.prosumer(j)
    prices = np.sort(np.asarray(prices, dtype=float))
    if prices.size == 0:
        raise ValueError("empty price set")
    fc = np.asarray(forecast, dtype=float)
    P = _window_problem(s, j, state, fc)
    col = int(P.var("p")[0])
    try:
        sweep = CostSweep(P, col)
    except Exception as exc:
        raise AuctionError(f"prosumer {j.id} hour {state.hour}: {exc}") from exc
    C = s.ceiling_price
    if refine:
        r0, steps = _response_walk(sweep, col, C)
    else:
        resp = []
        for pi in prices:
            x = sweep.solve(-pi)
            if x is None:
                raise AuctionError(f"prosumer {j.id} hour {state.hour}: look-ahead problem infeasible")
            resp.append(float(x[col]))
        r0 = resp[0]
        steps = [(prices[b], resp[b + 1]) for b in range(len(prices) - 1) if resp[b + 1] != resp[b]]
    return BidCurve(j.id, state.hour, _blocks_from_steps(r0, steps, C), r0, tuple(steps))


class _Supply:
    """Set-valued excess supply ``E(price)`` of generators and blocks; nondecreasing in price."""

    def __init__(self, generators, blocks, t):
        self.smooth = []  # (alpha, beta, lo, hi) with alpha > 0
        self.steps = []   # (price, below, above): value below/above price, anything between at price
        for g in generators:
            lo, hi = float(g.g_min[t]), float(g.g_max[t])
            if g.alpha > 0:
                self.smooth.append((g.alpha, g.beta, lo, hi))
            else:
                self.steps.append((g.beta, lo, hi))
        for b in blocks:
            if b.quantity < 0:
                self.steps.append((b.price, b.quantity, 0.0))
            else:
                self.steps.append((b.price, 0.0, b.quantity))
        self.canon = {}
        rep = None
        for p in sorted({p for p, _, _ in self.steps}):
            if rep is None or not same_price(rep, p):
                rep = p
            self.canon[p] = rep
        self.steps = [(self.canon[p], below, above) for p, below, above in self.steps]

    def smooth_value(self, price):
        return sum(min(max((price - b) / (2 * a), lo), hi) for a, b, lo, hi in self.smooth)

    def bounds(self, price):
        """(min, max) of E at ``price``."""
        lo = hi = self.smooth_value(price)
        for p, below, above in self.steps:
            if price < p:
                lo += below
                hi += below
            elif price > p:
                lo += above
                hi += above
            else:
                lo += below
                hi += above
        return lo, hi

    def breakpoints(self):
        pts = {p for p, _, _ in self.steps}
        for a, b, lo, hi in self.smooth:
            pts.add(b + 2 * a * lo)
            pts.add(b + 2 * a * hi)
        return sorted(pts)


def _balance_price(E: _Supply) -> float | None:
    """A price at which ``0`` lies in ``E(price)``; None if none exists."""
    pts = E.breakpoints()
    if not pts:
        return None
    prev = None
    for p in pts:
        lo, hi = E.bounds(p)
        if hi >= 0:
            if lo <= 0:
                return p
            if prev is None:
                return None
            # E is continuous and linear between consecutive breakpoints
            e0 = E.bounds(prev)[1]
            return prev + (0.0 - e0) * (p - prev) / (lo - e0)
        prev = p
    return None


def clear_market(bids: Mapping[str, BidCurve] | Sequence[BidCurve], generators: Sequence[GeneratorSpec], t: int,
                 ceiling: float) -> ClearingResult:
    """Welfare-maximizing acceptance of divisible blocks against truthful generator supply for hour ``t``.

    Solved exactly as the intersection of aggregate supply and demand: the
    price is the multiplier of the balance row, and everything indifferent at
    that price (blocks at exactly the price, linear-cost generators with
    ``beta`` equal to it) is accepted pro rata by size.
    """
    if not generators:
        raise ValueError("no generators")
    curves = list(bids.values()) if isinstance(bids, Mapping) else list(bids)
    blocks = [(c.prosumer, k, b) for c in curves for k, b in enumerate(c.blocks)]
    E = _Supply(generators, [b for _, _, b in blocks], t)
    price = _balance_price(E)
    if price is None:
        return ClearingResult(t, "infeasible", message="no price balances supply and demand")

    fixed = E.smooth_value(price)
    tied = 0.0
    lo_sum = 0.0
    for p, below, above in E.steps:
        if p == price:
            lo_sum += min(below, above)
            tied += abs(above - below)
        else:
            fixed += below if price < p else above
    theta = 0.0 if tied == 0 else min(max((-fixed - lo_sum) / tied, 0.0), 1.0)

    def take(p, below, above):
        p = E.canon[p]
        if price < p:
            return below
        if price > p:
            return above
        return below + theta * (above - below)

    gen = {}
    for g in generators:
        lo, hi = float(g.g_min[t]), float(g.g_max[t])
        if g.alpha > 0:
            gen[g.id] = min(max((price - g.beta) / (2 * g.alpha), lo), hi)
        else:
            gen[g.id] = take(g.beta, lo, hi)
    accepted = {c.prosumer: np.zeros(len(c.blocks)) for c in curves}
    for who, k, b in blocks:
        accepted[who][k] = take(b.price, b.quantity, 0.0) if b.quantity < 0 else take(b.price, 0.0, b.quantity)
    welfare = -sum(b.price * accepted[who][k] for who, k, b in blocks) - sum(
        g.alpha * gen[g.id] ** 2 + g.beta * gen[g.id] for g in generators)
    res = ClearingResult(t, "optimal", float(price), accepted, gen, welfare)
    for who, k, b in blocks:
        if b.quantity < 0 and b.price >= ceiling and accepted[who][k] > b.quantity + 1e-6:
            res.status = "infeasible"
            res.message = (f"demand bid at ceiling price not served ({-accepted[who][k]:.6g} of {-b.quantity:.6g} "
                           f"MW for {who}); inflexible demand exceeds generation capacity")
            break
    return res


def advance_state(s: Scenario, state: SatelliteState, price: float, cleared: float, forecast) -> tuple[SatelliteState, Commitment]:
    """Commit the first hour at the cleared quantity and roll energies forward."""
    j = s.prosumer(state.prosumer)
    t = state.hour
    fc = np.array(forecast, dtype=float)
    fc[0] = price
    P = _window_problem(s, j, state, fc)
    p0 = int(P.var("p")[0])
    P.set_bounds(p0, cleared, cleared)
    sol = solve(P)
    if not sol.optimal:
        raise StateError(f"prosumer {j.id} hour {t}: cannot commit {cleared:.6g} MW ({sol.status})")
    values = {fam: float(sol.x[idx[0]]) for fam, idx in P._var_families.items()}
    values["p"] = float(cleared)

    storage = {}
    for st in j.storages:
        r = st.carrier
        e = state.storage_energy[r] + st.eff_charge * values[f"ch:{r.value}"] - values[f"dc:{r.value}"] / st.eff_discharge
        if not st.e_min - ENVELOPE_TOL <= e <= st.e_max + ENVELOPE_TOL:
            raise StateError(f"prosumer {j.id} hour {t}: {r.value} storage energy {e:.9g} outside "
                             f"[{st.e_min}, {st.e_max}]")
        storage[r] = e
        values[f"soc:{r.value}"] = e
    flex = {}
    for d in j.demands:
        if not d.flexible:
            continue
        r = d.carrier
        e = state.flex_energy[r] + values[f"flex:{r.value}"]
        lo, hi = float(d.flex_min[t]), float(d.flex_max[t])
        if t == s.horizon - 1:
            lo = hi = d.flex_total
        if not lo - ENVELOPE_TOL <= e <= hi + ENVELOPE_TOL:
            raise StateError(f"prosumer {j.id} hour {t}: flexible {r.value} energy {e:.9g} outside [{lo}, {hi}]")
        flex[r] = e
        values[f"flexe:{r.value}"] = e
    new = SatelliteState(j.id, t + 1, storage, flex, fc)
    return new, Commitment(j.id, t, float(price), values)


def replay_energies(j: ProsumerSpec, start: SatelliteState, commitments: Sequence[Commitment]):
    """Re-integrate committed charge/discharge and flexible serving; one (storage, flex) pair per hour."""
    e_s = dict(start.storage_energy)
    e_f = dict(start.flex_energy)
    out = []
    for c in commitments:
        for st in j.storages:
            r = st.carrier
            e_s[r] = e_s[r] + st.eff_charge * c.values[f"ch:{r.value}"] - c.values[f"dc:{r.value}"] / st.eff_discharge
        for r in e_f:
            e_f[r] = e_f[r] + c.values[f"flex:{r.value}"]
        out.append((dict(e_s), dict(e_f)))
    return out


def direct_response(s: Scenario, state: SatelliteState, forecast, price: float, delta: float = 1e-6) -> tuple[float, float]:
    """Range of first-hour net injection the look-ahead problem chooses at ``price``.

    The optimum is unique except at a breakpoint, where it spans the responses
    just below and just above.
    """
    j = s.prosumer(state.prosumer)
    vals = []
    for pi in (price - delta, price, price + delta):
        fc = np.array(forecast, dtype=float)
        fc[0] = pi
        P = _window_problem(s, j, state, fc)
        sol = solve(P)
        if not sol.optimal:
            raise AuctionError(f"prosumer {j.id} hour {state.hour}: {sol.status}")
        vals.append(float(sol.value("p")[0]))
    return min(vals), max(vals)


@dataclass
class BidLogRow:
    hour: int
    prosumer: str
    block: int
    price: float
    quantity: float
    accepted: float


def write_bid_log(rows: Sequence[BidLogRow], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "prosumer", "block", "price", "quantity", "accepted"])
        for r in rows:
            w.writerow([r.hour, r.prosumer, r.block, repr(r.price), repr(r.quantity), repr(r.accepted)])
    return path


def run_market_auction(s: Scenario, cfg: AuctionConfig | None = None, runtime: Runtime | None = None) -> DispatchResult:
    cfg = cfg or AuctionConfig()
    T = s.horizon
    if cfg.lookahead > T:
        raise ValueError(f"lookahead {cfg.lookahead} exceeds horizon {T}")
    own_runtime = runtime is None
    rt = runtime or Runtime(cfg.threads)
    pro = {j.id: j for j in s.prosumers}
    ids = list(pro)
    states = {a: initial_state(pro[a]) for a in ids}
    history: dict[str, list[SatelliteState]] = {a: [states[a]] for a in ids}
    commits: dict[str, list[Commitment]] = {a: [] for a in ids}
    gen = {g.id: np.zeros(T) for g in s.generators}
    prices = np.zeros(T)
    bid_log: list[BidLogRow] = []
    curves_kept: dict[tuple[int, str], BidCurve] = {}
    forecasts: list[np.ndarray] = []
    t_start = time.perf_counter()

    def bid_work(agent, env):
        t, fc = env.payload
        Pi = gather_bid_prices(s, pro[agent], fc, t, flex_range=cfg.flex_range, opportunity=cfg.opportunity)
        return BidSubmission(generate_bid_curve(s, pro[agent], states[agent], Pi, fc, refine=cfg.refine))

    def advance_work(agent, env):
        notice: ClearingNotice = env.payload
        fc = forecasts[notice.hour]
        return advance_state(s, states[agent], notice.price, notice.accepted[agent], fc)

    try:
        for t in range(T):
            with rt.coordinator_phase("forecast"):
                fc = make_price_forecast(prices[:t], s, t, cfg.lookahead)
                fc.flags.writeable = False
                forecasts.append(fc)
            subs = rt.execute_round((t, fc), ids, bid_work, phase="bid") if ids else {}
            curves = {a: subs[a].curve for a in ids}
            with rt.coordinator_phase("clear"):
                res = clear_market(curves, s.generators, t, s.ceiling_price)
            if not res.optimal:
                raise ClearingInfeasible(t, res.message or res.status)
            prices[t] = res.price
            for g, v in res.generation.items():
                gen[g][t] = v
            for a in ids:
                for k, (b, acc) in enumerate(zip(curves[a].blocks, res.accepted[a])):
                    bid_log.append(BidLogRow(t, a, k, b.price, b.quantity, float(acc)))
                if cfg.keep_curves:
                    curves_kept[(t, a)] = curves[a]
            notice = ClearingNotice(t, res.price, {a: res.net(a) for a in ids})
            adv = rt.execute_round(notice, ids, advance_work, phase="advance") if ids else {}
            for a in ids:
                states[a], c = adv[a]
                history[a].append(states[a])
                commits[a].append(c)
    finally:
        if own_runtime:
            rt.close()

    prosumers = {}
    for a in ids:
        fams = commits[a][0].values.keys() if commits[a] else ()
        prosumers[a] = {f: np.array([c.values[f] for c in commits[a]]) for f in fams}
    out = DispatchResult("auction", gen, prosumers, prices)
    out.cost = system_cost(out, s)
    out.diagnostics = {
        "wall_time": time.perf_counter() - t_start,
        "iterations": T,
        "clearings": T,
        "max_abs_imbalance": float(np.max(np.abs(out.imbalance()))) if T else 0.0,
        "states": history,
        "commitments": commits,
        "forecasts": forecasts,
        "bid_log": bid_log,
        "curves": curves_kept,
        "events": rt.trace,
    }
    return out
