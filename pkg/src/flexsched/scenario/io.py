"""Scenario files: a YAML document plus sibling CSV timeseries.

Layout::

    meta:
      name: demo                 # optional
      horizon: 24
      ceiling_price: 3000        # optional, default 3000
      timeseries: series.csv     # one file or a list, relative to the YAML
    carriers:                    # every non-electric carrier referenced below
      methane: {price: methane_price}
      heat: {}
    generators:
      - {id: g1, alpha: 0.01, beta: 10, g_min: 0, g_max: g1_avail}
    prosumers:
      - id: house1
        solar_thermal_max: house1_solar      # optional
        converters:
          - {id: hp, input: electricity, output: heat, capacity: 5,
             efficiency_nonelectric: 3.0}
          - {id: chp, input: methane, output: electricity, capacity: 10,
             efficiency_electric: 0.4, efficiency_nonelectric: 0.45,
             produces_heat: true}
        storages:
          - {id: tank, carrier: heat, power_cap: 2, e_min: 0, e_max: 8,
             eff_charge: 0.95, eff_discharge: 0.95, initial_energy: 4}
        demands:
          - {carrier: heat, base: house1_heat, flex_min: house1_fmin,
             flex_max: house1_fmax, flex_total: 12}

Every timeseries field holds either a column name from the CSV files (header =
series id, one row per hour) or a bare number meaning a constant series.
Unknown keys are rejected.
"""
from __future__ import annotations

import csv
import hashlib
import io
from pathlib import Path

import numpy as np
import yaml

from .model import (
    DEFAULT_CEILING_PRICE,
    Carrier,
    ConverterSpec,
    DemandSpec,
    GeneratorSpec,
    ProsumerSpec,
    Scenario,
    ScenarioError,
    StorageSpec,
    series,
    validate_scenario,
)

_KEYS = {
    "top": ({"meta", "generators"}, {"carriers", "prosumers"}),
    "meta": ({"horizon"}, {"name", "ceiling_price", "timeseries"}),
    "carrier": (set(), {"price"}),
    "generator": ({"id", "alpha", "beta", "g_max"}, {"g_min"}),
    "prosumer": ({"id"}, {"converters", "storages", "demands", "solar_thermal_max"}),
    "converter": (
        {"id", "input", "output", "capacity"},
        {"efficiency_electric", "efficiency_nonelectric", "produces_heat"},
    ),
    "storage": (
        {"id", "carrier", "power_cap", "e_min", "e_max", "eff_charge", "eff_discharge"},
        {"initial_energy"},
    ),
    "demand": ({"carrier", "base"}, {"flex_min", "flex_max", "flex_total"}),
}


def _keys(kind: str, d, where: str) -> dict:
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected a mapping, got {type(d).__name__}")
    required, optional = _KEYS[kind]
    unknown = set(d) - required - optional
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ScenarioError(f"{where}: missing keys {sorted(missing)}")
    return d


def _carrier(name, where) -> Carrier:
    try:
        return Carrier(name)
    except ValueError:
        raise ScenarioError(f"{where}: unknown carrier {name!r}") from None


def read_columns(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ScenarioError(f"{path.name}: empty timeseries file")
    header, body = rows[0], rows[1:]
    cols: dict[str, list[float]] = {h: [] for h in header}
    for lineno, row in enumerate(body, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ScenarioError(f"{path.name}:{lineno}: expected {len(header)} fields, got {len(row)}")
        for h, v in zip(header, row):
            try:
                cols[h].append(float(v))
            except ValueError:
                raise ScenarioError(f"{path.name}:{lineno}: column {h!r}: not a number: {v!r}") from None
    return {h: np.asarray(v) for h, v in cols.items()}


class _Series:
    def __init__(self, columns: dict[str, np.ndarray], horizon: int):
        self.columns = columns
        self.T = horizon

    def __call__(self, ref, where):
        if isinstance(ref, bool):
            raise ScenarioError(f"{where}: expected a series name or number")
        if isinstance(ref, (int, float)):
            return series(float(ref), self.T)
        if not isinstance(ref, str):
            raise ScenarioError(f"{where}: expected a series name or number")
        if ref not in self.columns:
            raise ScenarioError(f"{where}: unknown timeseries {ref!r}")
        a = self.columns[ref]
        if len(a) != self.T:
            raise ScenarioError(f"{where}: timeseries length mismatch: {ref!r} has {len(a)} rows, horizon is {self.T}")
        return series(a)


def _num(d, key, where, default=None) -> float:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: {key} must be a number")
    return float(v)


def parse_scenario(doc: dict, columns: dict[str, np.ndarray]) -> Scenario:
    """Build a Scenario from a parsed document; no invariant validation."""
    _keys("top", doc, "scenario")
    meta = _keys("meta", doc["meta"], "meta")
    T = meta["horizon"]
    if isinstance(T, bool) or not isinstance(T, int):
        raise ScenarioError("meta: horizon must be an integer")
    ts = _Series(columns, T)

    declared = {Carrier.ELECTRICITY}
    prices = {}
    for name, spec in (doc.get("carriers") or {}).items():
        c = _carrier(name, "carriers")
        _keys("carrier", spec or {}, f"carriers.{name}")
        declared.add(c)
        if spec and "price" in spec:
            prices[c] = ts(spec["price"], f"carriers.{name}.price")

    def ref(name, where):
        c = _carrier(name, where)
        if c not in declared:
            raise ScenarioError(f"{where}: carrier {name!r} is not declared in carriers")
        return c

    gens = []
    for k, g in enumerate(doc["generators"] or []):
        w = f"generators[{k}]"
        _keys("generator", g, w)
        w = f"generator {g['id']}"
        gens.append(GeneratorSpec(
            id=str(g["id"]),
            alpha=_num(g, "alpha", w),
            beta=_num(g, "beta", w),
            g_min=ts(g.get("g_min", 0.0), f"{w}.g_min"),
            g_max=ts(g["g_max"], f"{w}.g_max"),
        ))

    pros = []
    for k, p in enumerate(doc.get("prosumers") or []):
        _keys("prosumer", p, f"prosumers[{k}]")
        w = f"prosumer {p['id']}"
        convs = []
        for c in p.get("converters") or []:
            _keys("converter", c, f"{w}.converters")
            cw = f"{w} converter {c['id']}"
            convs.append(ConverterSpec(
                id=str(c["id"]),
                input_carrier=ref(c["input"], cw),
                output_carrier=ref(c["output"], cw),
                capacity=_num(c, "capacity", cw),
                efficiency_electric=_num(c, "efficiency_electric", cw, 0.0),
                efficiency_nonelectric=_num(c, "efficiency_nonelectric", cw, 0.0),
                produces_heat=bool(c.get("produces_heat", False)),
            ))
        stores = []
        for st in p.get("storages") or []:
            _keys("storage", st, f"{w}.storages")
            sw = f"{w} storage {st['id']}"
            stores.append(StorageSpec(
                id=str(st["id"]),
                carrier=ref(st["carrier"], sw),
                power_cap=_num(st, "power_cap", sw),
                e_min=_num(st, "e_min", sw),
                e_max=_num(st, "e_max", sw),
                eff_charge=_num(st, "eff_charge", sw),
                eff_discharge=_num(st, "eff_discharge", sw),
                initial_energy=_num(st, "initial_energy", sw) if "initial_energy" in st else None,
            ))
        dems = []
        for d in p.get("demands") or []:
            _keys("demand", d, f"{w}.demands")
            dw = f"{w} demand {d['carrier']}"
            flexible = "flex_min" in d or "flex_max" in d
            dems.append(DemandSpec(
                carrier=ref(d["carrier"], dw),
                base=ts(d["base"], f"{dw}.base"),
                flex_min=ts(d["flex_min"], f"{dw}.flex_min") if "flex_min" in d else None,
                flex_max=ts(d["flex_max"], f"{dw}.flex_max") if "flex_max" in d else None,
                flex_total=_num(d, "flex_total", dw, 0.0) if flexible or "flex_total" in d else 0.0,
            ))
        solar = p.get("solar_thermal_max")
        pros.append(ProsumerSpec(
            id=str(p["id"]),
            converters=tuple(convs),
            storages=tuple(stores),
            demands=tuple(dems),
            solar_thermal_max=None if solar is None else ts(solar, f"{w}.solar_thermal_max"),
        ))

    return Scenario(
        horizon=T,
        generators=tuple(gens),
        prosumers=tuple(pros),
        carrier_prices=prices,
        ceiling_price=_num(meta, "ceiling_price", "meta", DEFAULT_CEILING_PRICE),
        name=str(meta.get("name", "")),
    )


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; raises ScenarioError on the first problem."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ScenarioError(f"{path.name}: parse error: {e}") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path.name}: parse error: top level must be a mapping")
    meta = doc.get("meta") if isinstance(doc.get("meta"), dict) else {}
    files = meta.get("timeseries") or []
    if isinstance(files, str):
        files = [files]
    columns: dict[str, np.ndarray] = {}
    for f in files:
        for k, v in read_columns(path.parent / f).items():
            if k in columns:
                raise ScenarioError(f"{f}: duplicate series id {k!r}")
            columns[k] = v
    s = parse_scenario(doc, columns)
    validate_scenario(s).raise_first()
    return s


def _fmt(x: float) -> str:
    return repr(float(x))


def scenario_document(s: Scenario, csv_name: str = "timeseries.csv") -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of parse_scenario: the YAML document and the columns it references."""
    cols: dict[str, np.ndarray] = {}

    def put(key, a):
        cols[key] = np.asarray(a)
        return key

    carriers = {}
    used = {c.input_carrier for p in s.prosumers for c in p.converters}
    used |= {c.output_carrier for p in s.prosumers for c in p.converters}
    used |= {x.carrier for p in s.prosumers for x in (*p.storages, *p.demands)}
    if any(p.solar_thermal_max is not None for p in s.prosumers):
        used.add(Carrier.HEAT)
    used |= set(s.carrier_prices)
    used.discard(Carrier.ELECTRICITY)
    for c in sorted(used, key=lambda c: c.value):
        carriers[c.value] = {"price": put(f"price.{c.value}", s.carrier_prices[c])} if c in s.carrier_prices else {}

    gens = [
        {"id": g.id, "alpha": g.alpha, "beta": g.beta,
         "g_min": put(f"{g.id}.g_min", g.g_min), "g_max": put(f"{g.id}.g_max", g.g_max)}
        for g in s.generators
    ]
    pros = []
    for p in s.prosumers:
        d = {"id": p.id}
        if p.solar_thermal_max is not None:
            d["solar_thermal_max"] = put(f"{p.id}.solar_thermal_max", p.solar_thermal_max)
        if p.converters:
            d["converters"] = [
                {"id": c.id, "input": c.input_carrier.value, "output": c.output_carrier.value,
                 "capacity": c.capacity, "efficiency_electric": c.efficiency_electric,
                 "efficiency_nonelectric": c.efficiency_nonelectric, "produces_heat": c.produces_heat}
                for c in p.converters
            ]
        if p.storages:
            d["storages"] = []
            for st in p.storages:
                e = {"id": st.id, "carrier": st.carrier.value, "power_cap": st.power_cap, "e_min": st.e_min,
                     "e_max": st.e_max, "eff_charge": st.eff_charge, "eff_discharge": st.eff_discharge}
                if st.initial_energy is not None:
                    e["initial_energy"] = st.initial_energy
                d["storages"].append(e)
        if p.demands:
            d["demands"] = []
            for dm in p.demands:
                key = f"{p.id}.{dm.carrier.value}"
                e = {"carrier": dm.carrier.value, "base": put(f"{key}.base", dm.base)}
                if dm.flexible:
                    e["flex_min"] = put(f"{key}.flex_min", dm.flex_min)
                    e["flex_max"] = put(f"{key}.flex_max", dm.flex_max)
                    e["flex_total"] = dm.flex_total
                elif dm.flex_total:
                    e["flex_total"] = dm.flex_total
                d["demands"].append(e)
        pros.append(d)

    meta = {"horizon": s.horizon, "ceiling_price": s.ceiling_price, "timeseries": csv_name}
    if s.name:
        meta = {"name": s.name, **meta}
    doc = {"meta": meta, "carriers": carriers, "generators": gens, "prosumers": pros}
    return _plain(doc), cols


def _plain(x):
    """numpy scalars -> builtins, for the YAML dumper."""
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def write_columns(path: Path, cols: dict[str, np.ndarray], horizon: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(cols))
        for t in range(horizon):
            w.writerow([_fmt(a[t]) for a in cols.values()])


def save_scenario(s: Scenario, path) -> Path:
    """Write ``s`` as ``path`` (YAML) plus ``<stem>.csv`` next to it."""
    path = Path(path)
    csv_name = f"{path.stem}.csv"
    doc, cols = scenario_document(s, csv_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    write_columns(path.parent / csv_name, cols, s.horizon)
    return path


def scenario_digest(s: Scenario) -> str:
    """Content hash of a scenario (independent of file names)."""
    doc, cols = scenario_document(s)
    h = hashlib.sha256(yaml.safe_dump(doc, sort_keys=True).encode())
    buf = io.StringIO()
    for k in sorted(cols):
        buf.write(k + ":" + ",".join(_fmt(v) for v in cols[k]) + "\n")
    h.update(buf.getvalue().encode())
    return h.hexdigest()[:16]
