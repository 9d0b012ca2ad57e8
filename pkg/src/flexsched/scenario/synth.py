"""Seeded synthetic scenarios standing in for extracted real-system data.

The generator/prosumer split follows the real dataset's clustering: 16
generators and 14 prosumers at 30 agents, then roughly 6 generators and 4
prosumers for every 10 agents added.
"""
from __future__ import annotations

import numpy as np

from .model import (
    Carrier,
    ConverterSpec,
    DemandSpec,
    GeneratorSpec,
    ProsumerSpec,
    Scenario,
    ScenarioError,
    StorageSpec,
    series,
)

MIN_AGENTS = 5
MIN_HORIZON = 24

# kind -> (linear cost range, marginal-cost rise over full output range), EUR/MWh
GENERATOR_KINDS = {
    "wind": ((0.0, 2.0), (0.1, 0.4)),
    "solar": ((0.0, 1.0), (0.1, 0.4)),
    "nuclear": ((8.0, 12.0), (0.2, 0.6)),
    "lignite": ((18.0, 24.0), (0.4, 1.0)),
    "coal": ((28.0, 36.0), (0.8, 1.6)),
    "ccgt": ((42.0, 55.0), (1.2, 2.4)),
    "biomass": ((35.0, 45.0), (2.0, 4.0)),
    "ocgt": ((70.0, 90.0), (4.0, 8.0)),
    "oil": ((120.0, 160.0), (6.0, 12.0)),
}
# order in which generator kinds are added; renewables and mid-merit first
GENERATOR_CYCLE = [
    "wind", "solar", "nuclear", "ccgt", "coal", "lignite", "ocgt", "wind",
    "solar", "ccgt", "biomass", "coal", "ccgt", "ocgt", "wind", "oil",
]
PROSUMER_CYCLE = ["heat", "ev", "hydrogen", "battery", "heat", "household", "ev"]


def agent_split(n_agents: int) -> tuple[int, int]:
    """(generators, prosumers) for a given agent count."""
    if n_agents < MIN_AGENTS:
        raise ScenarioError(f"n_agents must be >= {MIN_AGENTS}, got {n_agents}")
    if n_agents >= 30:
        n_gen = 16 + int(round(0.6 * (n_agents - 30)))
    else:
        n_gen = int(round(n_agents * 16 / 30))
    n_gen = min(max(n_gen, 1), n_agents - 1)
    return n_gen, n_agents - n_gen


def _daily(T, rng, peak_hour, amplitude):
    t = np.arange(T)
    shape = 1.0 + amplitude * np.cos(2 * np.pi * (t - peak_hour) / 24.0)
    return shape * (1.0 + 0.05 * rng.standard_normal(T))


def _solar_shape(T, rng):
    h = np.arange(T) % 24
    day = np.clip(np.sin(np.pi * (h - 6) / 12.0), 0.0, None)
    cloud = np.repeat(rng.uniform(0.5, 1.0, size=(T + 23) // 24), 24)[:T]
    return day * cloud


def _wind_shape(T, rng):
    x = np.empty(T)
    x[0] = rng.uniform(0.2, 0.8)
    for t in range(1, T):
        x[t] = x[t - 1] + 0.08 * rng.standard_normal() + 0.05 * (0.45 - x[t - 1])
    return np.clip(x, 0.02, 1.0)


def _flex_envelope(total, T, band_hours):
    """Cumulative-energy envelope around a flat serving schedule."""
    nominal = total * np.arange(1, T + 1) / T
    band = total * band_hours / T
    lo = np.clip(nominal - band, 0.0, total)
    hi = np.clip(nominal + band, 0.0, total)
    lo[-1] = hi[-1] = total
    return lo, hi


def _max_step(fmin, fmax):
    """Largest one-hour increment of cumulative flexible energy the envelope allows."""
    return float(np.max(fmax - np.concatenate([[0.0], fmin[:-1]])))


def _storage(sid, carrier, rng, power, hours, eff):
    e_max = round(power * hours, 3)
    e_min = round(0.1 * e_max, 3)
    return StorageSpec(
        id=sid, carrier=carrier, power_cap=round(power, 3), e_min=e_min, e_max=e_max,
        eff_charge=eff, eff_discharge=eff,
    )


def _prosumer(kind, pid, T, rng, electric_peak):
    """One prosumer of the given kind; returns (spec, worst-case electric draw per hour)."""
    u = lambda a, b: float(round(rng.uniform(a, b), 3))
    base_el = electric_peak * _daily(T, rng, 19, 0.25) / 1.25
    draw = base_el.copy()
    convs, stores, dems = [], [], []
    solar = None

    if kind == "heat":
        heat_peak = u(20, 50)
        heat = heat_peak * _daily(T, rng, 7, 0.3) / 1.3
        flex_total = round(float(0.15 * heat.sum()), 3)
        fmin, fmax = _flex_envelope(flex_total, T, 4)
        step = _max_step(fmin, fmax)
        cop = u(2.5, 3.5)
        hp_cap = u(0.2, 0.4) * heat_peak / cop
        boiler_cap = 1.1 * (heat.max() + step)
        convs += [
            ConverterSpec(f"{pid}.hp", Carrier.ELECTRICITY, Carrier.HEAT, round(hp_cap, 3), efficiency_nonelectric=cop),
            ConverterSpec(f"{pid}.boiler", Carrier.METHANE, Carrier.HEAT, round(boiler_cap, 3), efficiency_nonelectric=0.9),
            ConverterSpec(f"{pid}.chp", Carrier.METHANE, Carrier.ELECTRICITY, u(5, 15),
                          efficiency_electric=0.4, efficiency_nonelectric=0.45, produces_heat=True),
            ConverterSpec(f"{pid}.eboiler", Carrier.ELECTRICITY, Carrier.HEAT, u(2, 6), efficiency_nonelectric=0.99),
        ]
        stores.append(_storage(f"{pid}.tank", Carrier.HEAT, rng, u(3, 8), u(3, 6), 0.95))
        dems.append(DemandSpec(Carrier.HEAT, series(heat), series(fmin), series(fmax), flex_total))
        solar = series(u(2, 8) * _solar_shape(T, rng))
        draw += hp_cap + convs[-1].capacity
    elif kind == "hydrogen":
        h2_peak = u(10, 30)
        h2 = h2_peak * _daily(T, rng, 12, 0.15) / 1.15
        flex_total = round(float(0.2 * h2.sum()), 3)
        fmin, fmax = _flex_envelope(flex_total, T, 6)
        step = _max_step(fmin, fmax)
        ely_cap = u(0.5, 1.0) * h2_peak / 0.7
        convs += [
            ConverterSpec(f"{pid}.electrolyzer", Carrier.ELECTRICITY, Carrier.HYDROGEN, round(ely_cap, 3),
                          efficiency_nonelectric=0.7),
            ConverterSpec(f"{pid}.smr", Carrier.METHANE, Carrier.HYDROGEN, round(1.1 * (h2.max() + step) / 0.7, 3),
                          efficiency_nonelectric=0.7),
            ConverterSpec(f"{pid}.fuelcell", Carrier.HYDROGEN, Carrier.ELECTRICITY, u(2, 6), efficiency_electric=0.5),
        ]
        stores.append(_storage(f"{pid}.h2tank", Carrier.HYDROGEN, rng, u(5, 15), u(4, 8), 0.97))
        dems.append(DemandSpec(Carrier.HYDROGEN, series(h2), series(fmin), series(fmax), flex_total))
        draw += ely_cap
    elif kind in ("ev", "battery", "household"):
        if kind == "ev":
            st = _storage(f"{pid}.ev", Carrier.ELECTRICITY, rng, u(5, 15), u(3, 5), 0.92)
        elif kind == "battery":
            st = _storage(f"{pid}.battery", Carrier.ELECTRICITY, rng, u(10, 25), u(2, 4), 0.95)
        else:
            st = None
        if st is not None:
            stores.append(st)
            draw += st.power_cap
    else:
        raise ValueError(kind)

    flex_el = 0.0 if kind == "battery" else round(float(u(0.05, 0.15) * base_el.sum()), 3)
    if flex_el > 0:
        fmin, fmax = _flex_envelope(flex_el, T, 3)
        dems.insert(0, DemandSpec(Carrier.ELECTRICITY, series(base_el), series(fmin), series(fmax), flex_el))
        draw += _max_step(fmin, fmax)
    else:
        dems.insert(0, DemandSpec(Carrier.ELECTRICITY, series(base_el)))
    spec = ProsumerSpec(pid, tuple(convs), tuple(stores), tuple(dems), solar)
    return spec, draw


def synthesize_scenario(n_agents: int, horizon: int, seed: int = 0, *, min_alpha: float = 0.0) -> Scenario:
    """Deterministic random scenario with ``n_agents`` agents over ``horizon`` hours.

    All generators get a strictly positive quadratic cost coefficient (at
    least ``min_alpha`` if given).
    """
    if horizon < MIN_HORIZON:
        raise ScenarioError(f"horizon must be >= {MIN_HORIZON}, got {horizon}")
    n_gen, n_pro = agent_split(n_agents)
    rng = np.random.default_rng(seed)
    T = horizon

    prosumers, draw = [], np.zeros(T)
    for k in range(n_pro):
        kind = PROSUMER_CYCLE[k % len(PROSUMER_CYCLE)]
        spec, d = _prosumer(kind, f"{kind}{k}", T, rng, electric_peak=float(rng.uniform(15, 45)))
        prosumers.append(spec)
        draw += d

    gens_raw = []
    for k in range(n_gen):
        kind = GENERATOR_CYCLE[k % len(GENERATOR_CYCLE)]
        (b0, b1), (s0, s1) = GENERATOR_KINDS[kind]
        cap = rng.uniform(0.5, 1.5)
        if kind == "wind":
            avail = _wind_shape(T, rng)
        elif kind == "solar":
            avail = _solar_shape(T, rng)
        else:
            avail = np.full(T, rng.uniform(0.85, 1.0))
        gens_raw.append((f"{kind}{k}", rng.uniform(s0, s1), rng.uniform(b0, b1), cap, avail, kind))

    # size the fleet so firm capacity covers the worst-case simultaneous draw
    firm = [g for g in gens_raw if g[5] not in ("wind", "solar")] or gens_raw
    firm_share = sum(g[3] * g[4].min() for g in firm)
    scale = 1.25 * draw.max() / firm_share
    gens = []
    for gid, rise, beta, cap, avail, kind in gens_raw:
        g_max = np.round(scale * cap * avail, 3)
        alpha = max(float(np.format_float_positional(rise / (2 * scale * cap), 4, fractional=False)), min_alpha)
        gens.append(GeneratorSpec(gid, alpha, float(round(beta, 3)), series(0.0, T), series(g_max)))

    t = np.arange(T)
    prices = {
        Carrier.METHANE: series(np.round(rng.uniform(25, 35) + 3 * np.sin(2 * np.pi * t / 24.0), 3)),
        Carrier.HYDROGEN: series(np.round(rng.uniform(60, 90) + np.zeros(T), 3)),
    }
    return Scenario(
        horizon=T,
        generators=tuple(gens),
        prosumers=tuple(prosumers),
        carrier_prices=prices,
        name=f"synth-n{n_agents}-T{T}-s{seed}",
    )
