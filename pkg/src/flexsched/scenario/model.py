"""Immutable data model of a copper-plate multi-carrier energy system."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Iterator

import numpy as np


class Carrier(str, Enum):
    ELECTRICITY = "electricity"
    HEAT = "heat"
    HYDROGEN = "hydrogen"
    METHANE = "methane"
    BIOMASS = "biomass"
    OIL = "oil"
    TRANSPORT = "transport"


#: carriers with a local per-prosumer balance
LOCAL_CARRIERS = (Carrier.HEAT, Carrier.HYDROGEN)
#: carriers that may be held in a prosumer storage
STORAGE_CARRIERS = (Carrier.ELECTRICITY, Carrier.HEAT, Carrier.HYDROGEN)

DEFAULT_CEILING_PRICE = 3000.0


class ScenarioError(ValueError):
    """Malformed or invalid scenario."""


def series(values, n: int | None = None) -> np.ndarray:
    """Read-only float array; scalars are broadcast to length ``n``."""
    a = np.asarray(values, dtype=float)
    if a.ndim == 0:
        if n is None:
            raise ScenarioError("scalar series needs an explicit length")
        a = np.full(n, float(a))
    else:
        a = a.astype(float, copy=True)
    if a.ndim != 1:
        raise ScenarioError("timeseries must be one-dimensional")
    a.setflags(write=False)
    return a


class _Record:
    """Value equality for frozen dataclasses that hold numpy arrays."""

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if a is None or b is None or not np.array_equal(a, b):
                    return False
            elif isinstance(a, dict):
                if a.keys() != b.keys() or any(not np.array_equal(a[k], b[k]) for k in a):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GeneratorSpec(_Record):
    id: str
    alpha: float
    beta: float
    g_min: np.ndarray
    g_max: np.ndarray

    def marginal_cost(self, g):
        return 2.0 * self.alpha * np.asarray(g) + self.beta

    def cost(self, g):
        g = np.asarray(g, dtype=float)
        return self.alpha * g * g + self.beta * g


@dataclass(frozen=True, eq=False)
class ConverterSpec(_Record):
    """One conversion asset with a single input carrier.

    ``capacity`` bounds the input rate. X2P units (output electricity) produce
    ``efficiency_electric * input`` electricity, plus ``efficiency_nonelectric
    * input`` heat when ``produces_heat`` (CHP). P2X/X2X units produce
    ``efficiency_nonelectric * input`` of the output carrier.
    """

    id: str
    input_carrier: Carrier
    output_carrier: Carrier
    capacity: float
    efficiency_electric: float = 0.0
    efficiency_nonelectric: float = 0.0
    produces_heat: bool = False

    @property
    def uses_electricity(self) -> bool:
        return self.input_carrier == Carrier.ELECTRICITY

    @property
    def is_x2p(self) -> bool:
        return self.output_carrier == Carrier.ELECTRICITY

    def output_rate(self, carrier: Carrier) -> float:
        """Units of ``carrier`` produced per unit of input."""
        if carrier == Carrier.ELECTRICITY:
            return self.efficiency_electric if self.is_x2p else 0.0
        if self.is_x2p:
            return self.efficiency_nonelectric if (self.produces_heat and carrier == Carrier.HEAT) else 0.0
        return self.efficiency_nonelectric if carrier == self.output_carrier else 0.0


@dataclass(frozen=True, eq=False)
class StorageSpec(_Record):
    id: str
    carrier: Carrier
    power_cap: float
    e_min: float
    e_max: float
    eff_charge: float
    eff_discharge: float
    initial_energy: float | None = None

    @property
    def e0(self) -> float:
        return 0.5 * (self.e_min + self.e_max) if self.initial_energy is None else self.initial_energy


@dataclass(frozen=True, eq=False)
class DemandSpec(_Record):
    """Inflexible base demand plus a shift-only flexible part.

    ``flex_min``/``flex_max`` bound the cumulative flexible energy served by
    the end of each hour; by the last hour exactly ``flex_total`` is served.
    """

    carrier: Carrier
    base: np.ndarray
    flex_min: np.ndarray | None = None
    flex_max: np.ndarray | None = None
    flex_total: float = 0.0

    @property
    def flexible(self) -> bool:
        return self.flex_min is not None


@dataclass(frozen=True, eq=False)
class ProsumerSpec(_Record):
    id: str
    converters: tuple[ConverterSpec, ...] = ()
    storages: tuple[StorageSpec, ...] = ()
    demands: tuple[DemandSpec, ...] = ()
    solar_thermal_max: np.ndarray | None = None

    def demand(self, carrier: Carrier) -> DemandSpec | None:
        return next((d for d in self.demands if d.carrier == carrier), None)

    def storage(self, carrier: Carrier) -> StorageSpec | None:
        return next((s for s in self.storages if s.carrier == carrier), None)

    def local_carriers(self) -> list[Carrier]:
        """Heat/hydrogen carriers that need a local balance for this prosumer."""
        used = set()
        for c in self.converters:
            for r in LOCAL_CARRIERS:
                if c.output_rate(r) > 0:
                    used.add(r)
        used |= {d.carrier for d in self.demands} | {s.carrier for s in self.storages}
        if self.solar_thermal_max is not None:
            used.add(Carrier.HEAT)
        return [r for r in LOCAL_CARRIERS if r in used]

    @property
    def asset_ids(self) -> list[str]:
        return [c.id for c in self.converters] + [s.id for s in self.storages]


@dataclass(frozen=True, eq=False)
class Scenario(_Record):
    horizon: int
    generators: tuple[GeneratorSpec, ...]
    prosumers: tuple[ProsumerSpec, ...]
    carrier_prices: dict[Carrier, np.ndarray] = field(default_factory=dict)
    ceiling_price: float = DEFAULT_CEILING_PRICE
    name: str = ""

    @property
    def n_agents(self) -> int:
        return len(self.generators) + len(self.prosumers)

    def generator(self, gid: str) -> GeneratorSpec:
        for g in self.generators:
            if g.id == gid:
                return g
        raise KeyError(gid)

    def prosumer(self, pid: str) -> ProsumerSpec:
        for p in self.prosumers:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def price(self, carrier: Carrier) -> np.ndarray:
        try:
            return self.carrier_prices[carrier]
        except KeyError:
            raise ScenarioError(f"carrier {carrier.value!r} has no price series") from None

    def inflexible_demand(self) -> np.ndarray:
        """Summed electric base demand per hour."""
        tot = np.zeros(self.horizon)
        for p in self.prosumers:
            d = p.demand(Carrier.ELECTRICITY)
            if d is not None:
                tot += d.base
        return tot

    def capacity(self) -> np.ndarray:
        return sum((g.g_max for g in self.generators), np.zeros(self.horizon))

    def with_generators(self, generators) -> "Scenario":
        return replace(self, generators=tuple(generators))

    def with_prosumers(self, prosumers) -> "Scenario":
        return replace(self, prosumers=tuple(prosumers))

    def agent_ids(self) -> Iterator[str]:
        yield from (g.id for g in self.generators)
        yield from (p.id for p in self.prosumers)


# -- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    where: str
    message: str

    def __str__(self):
        return f"{self.where}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __len__(self):
        return len(self.violations)

    def add(self, where, message):
        self.violations.append(Violation(where, message))

    def raise_first(self):
        if self.violations:
            raise ScenarioError(str(self.violations[0]))


def _check_len(rep, where, name, a, T):
    if a is None:
        return False
    if len(a) != T:
        rep.add(where, f"timeseries length mismatch: {name} has {len(a)} entries, horizon is {T}")
        return False
    if not np.all(np.isfinite(a)):
        rep.add(where, f"{name} has missing or non-finite entries")
        return False
    return True


def validate_scenario(s: Scenario) -> ValidationReport:
    """Collect every invariant violation of ``s``; an empty report means valid."""
    rep = ValidationReport()
    T = s.horizon
    if T < 1:
        rep.add("meta", f"horizon must be >= 1, got {T}")
        return rep
    if not s.generators:
        rep.add("meta", "at least one generator is required")
    if s.ceiling_price <= 0:
        rep.add("meta", "ceiling_price must be positive")

    for c, mu in s.carrier_prices.items():
        if c == Carrier.ELECTRICITY:
            rep.add("carriers", "electricity is market-traded and cannot have an exogenous price")
        _check_len(rep, f"carriers.{c.value}", "price", mu, T)

    ids = [a for a in s.agent_ids()]
    dup = {a for a in ids if ids.count(a) > 1}
    if dup:
        rep.add("agents", f"duplicate agent ids {sorted(dup)}")

    for g in s.generators:
        w = f"generator {g.id}"
        if g.alpha < 0:
            rep.add(w, f"alpha must be >= 0, got {g.alpha}")
        ok = _check_len(rep, w, "g_min", g.g_min, T) & _check_len(rep, w, "g_max", g.g_max, T)
        if ok:
            for t in np.flatnonzero(g.g_min < 0):
                rep.add(w, f"g_min < 0 at t={t}")
            for t in np.flatnonzero(g.g_min > g.g_max):
                rep.add(w, f"g_min > g_max at t={t} ({g.g_min[t]} > {g.g_max[t]})")

    for p in s.prosumers:
        _validate_prosumer(rep, s, p)

    if s.generators and not rep.violations:
        short = np.flatnonzero(s.capacity() < s.inflexible_demand() - 1e-9)
        for t in short:
            rep.add(
                "feasibility",
                f"inflexible demand {s.inflexible_demand()[t]:.6g} exceeds generation capacity "
                f"{s.capacity()[t]:.6g} at t={t}",
            )
        tmin = sum(g.g_min for g in s.generators)
        over = np.flatnonzero(tmin > 0)
        if over.size and not s.prosumers:
            rep.add("feasibility", f"must-run generation with no demand at t={over[0]}")
    return rep


def _validate_prosumer(rep: ValidationReport, s: Scenario, p: ProsumerSpec) -> None:
    T = s.horizon
    w = f"prosumer {p.id}"
    aids = p.asset_ids
    dup = {a for a in aids if aids.count(a) > 1}
    if dup:
        rep.add(w, f"duplicate asset ids {sorted(dup)}")

    for c in p.converters:
        cw = f"{w} converter {c.id}"
        if c.capacity <= 0:
            rep.add(cw, "capacity must be > 0")
        if c.output_carrier not in (Carrier.ELECTRICITY,) + LOCAL_CARRIERS:
            rep.add(cw, f"output carrier must be electricity, heat or hydrogen, got {c.output_carrier.value}")
        if c.input_carrier == c.output_carrier:
            rep.add(cw, "input and output carrier are the same")
        if not c.uses_electricity and c.input_carrier not in s.carrier_prices:
            rep.add(cw, f"unknown carrier reference: input {c.input_carrier.value!r} has no price series")
        if c.is_x2p:
            if c.uses_electricity:
                rep.add(cw, "X2P converter cannot take electricity as input")
            if not 0 < c.efficiency_electric <= 1:
                rep.add(cw, f"electric efficiency must be in (0, 1], got {c.efficiency_electric}")
            if c.produces_heat and not 0 < c.efficiency_nonelectric <= 1:
                rep.add(cw, f"heat efficiency must be in (0, 1], got {c.efficiency_nonelectric}")
        else:
            # heat pumps have a coefficient of performance above one
            hp = c.uses_electricity and c.output_carrier == Carrier.HEAT
            if not c.efficiency_nonelectric > 0 or (not hp and c.efficiency_nonelectric > 1):
                rep.add(cw, f"efficiency out of range: {c.efficiency_nonelectric}")

    seen = set()
    for st in p.storages:
        sw = f"{w} storage {st.id}"
        if st.carrier not in STORAGE_CARRIERS:
            rep.add(sw, f"storage carrier must be electricity, heat or hydrogen, got {st.carrier.value}")
        if st.carrier in seen:
            rep.add(sw, f"more than one storage for carrier {st.carrier.value}")
        seen.add(st.carrier)
        if st.power_cap <= 0:
            rep.add(sw, "power_cap must be > 0")
        if not (0 < st.eff_charge <= 1 and 0 < st.eff_discharge <= 1):
            rep.add(sw, "storage efficiencies must be in (0, 1]")
        if st.e_min > st.e_max:
            rep.add(sw, "e_min > e_max")
        if not st.e_min <= st.e0 <= st.e_max:
            rep.add(sw, f"initial_energy {st.e0} outside [{st.e_min}, {st.e_max}]")

    seen = set()
    for d in p.demands:
        dw = f"{w} demand {d.carrier.value}"
        if d.carrier not in STORAGE_CARRIERS:
            rep.add(dw, f"demand carrier must be electricity, heat or hydrogen")
        if d.carrier in seen:
            rep.add(dw, "more than one demand for this carrier")
        seen.add(d.carrier)
        if _check_len(rep, dw, "base", d.base, T) and np.any(d.base < 0):
            rep.add(dw, f"negative base demand at t={int(np.flatnonzero(d.base < 0)[0])}")
        if (d.flex_min is None) != (d.flex_max is None):
            rep.add(dw, "flex_min and flex_max must be given together")
        elif d.flexible:
            ok = _check_len(rep, dw, "flex_min", d.flex_min, T) & _check_len(rep, dw, "flex_max", d.flex_max, T)
            if ok:
                bad = np.flatnonzero(d.flex_min > d.flex_max)
                if bad.size:
                    rep.add(dw, f"flex_min > flex_max at t={int(bad[0])}")
                elif not d.flex_min[-1] <= d.flex_total <= d.flex_max[-1]:
                    rep.add(dw, f"flex_total {d.flex_total} outside final envelope "
                                f"[{d.flex_min[-1]}, {d.flex_max[-1]}]")
        elif d.flex_total != 0:
            rep.add(dw, "flex_total given without an envelope")

    if p.solar_thermal_max is not None:
        if _check_len(rep, w, "solar_thermal_max", p.solar_thermal_max, T) and np.any(p.solar_thermal_max < 0):
            rep.add(w, "negative solar thermal availability")

    for r in p.local_carriers():
        d = p.demand(r)
        producers = [c for c in p.converters if c.output_rate(r) > 0]
        has_source = producers or (r == Carrier.HEAT and p.solar_thermal_max is not None)
        if d is not None and np.any(d.base > 0) and not has_source and p.storage(r) is None:
            rep.add(w, f"{r.value} demand has no local source")
