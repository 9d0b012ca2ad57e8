"""Common output of all coordinators, its cost, and its CSV layout."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .qp import Problem, solve
from .scenario import Carrier, Scenario


@dataclass
class DispatchResult:
    method: str
    generators: dict[str, np.ndarray]
    prosumers: dict[str, dict[str, np.ndarray]]
    prices: np.ndarray
    cost: float = np.nan
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.prices)

    def net_power(self, agent: str) -> np.ndarray:
        if agent in self.generators:
            return self.generators[agent]
        return self.prosumers[agent]["p"]

    def imbalance(self) -> np.ndarray:
        """Hourly ``sum(g) + sum(p)``; zero for a balanced dispatch."""
        tot = np.zeros(self.horizon)
        for g in self.generators.values():
            tot = tot + g
        for v in self.prosumers.values():
            tot = tot + v["p"]
        return tot

    def values(self) -> dict:
        """Every numeric array, flattened by key; for equality checks."""
        out = {"prices": self.prices}
        out.update({f"g/{k}": v for k, v in self.generators.items()})
        for j, fams in self.prosumers.items():
            out.update({f"{j}/{f}": v for f, v in fams.items()})
        return out

    def same_values(self, other: "DispatchResult") -> bool:
        a, b = self.values(), other.values()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a) and self.cost == other.cost

    def to_csv(self, out_dir) -> Path:
        """One CSV per variable family (columns = agents/assets, rows = hours) plus summary.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        T = self.horizon
        _write(out / "generation.csv", {k: v for k, v in self.generators.items()}, T)
        _write(out / "prices.csv", {"price": self.prices}, T)
        families: dict[str, dict[str, np.ndarray]] = {}
        for j, fams in self.prosumers.items():
            for f, v in fams.items():
                kind, _, asset = f.partition(":")
                families.setdefault(kind, {})[f"{j}:{asset}" if asset else j] = v
        for kind, cols in families.items():
            _write(out / f"prosumer_{kind}.csv", cols, T)
        summary = {
            "method": self.method,
            "cost": self.cost,
            "converged": self.converged,
            "max_abs_imbalance": float(np.max(np.abs(self.imbalance()))) if T else 0.0,
            **{k: v for k, v in self.diagnostics.items() if isinstance(v, (int, float, str, bool))},
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        return out


def _write(path, cols: dict[str, np.ndarray], T: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", *cols])
        for t in range(T):
            w.writerow([t, *(repr(float(v[t])) for v in cols.values())])


def system_cost(d: DispatchResult, s: Scenario) -> float:
    """Generation cost plus purchases of externally priced carriers."""
    if d.horizon != s.horizon:
        raise ValueError(f"dispatch covers {d.horizon} hours, scenario {s.horizon}")
    total = 0.0
    for g in s.generators:
        x = np.asarray(d.generators[g.id], dtype=float)
        if x.shape != (s.horizon,):
            raise ValueError(f"generator {g.id}: dispatch has shape {x.shape}")
        total += float(np.sum(g.cost(x)))
    for p in s.prosumers:
        fams = d.prosumers[p.id]
        for c in p.converters:
            key = f"x:{c.id}"
            if key in fams:
                total += float(s.price(c.input_carrier) @ fams[key])
    return total


def carrier_purchases(d: DispatchResult, s: Scenario) -> dict[Carrier, float]:
    out: dict[Carrier, float] = {}
    for p in s.prosumers:
        for c in p.converters:
            key = f"x:{c.id}"
            if key in d.prosumers[p.id]:
                out[c.input_carrier] = out.get(c.input_carrier, 0.0) + float(d.prosumers[p.id][key].sum())
    return out


def rebalance_generators(s: Scenario, prosumer_net: np.ndarray) -> np.ndarray | None:
    """Least-cost generator outputs covering a fixed prosumer net position.

    The target is clipped to the fleet's output range, so solver-noise surpluses
    do not make the problem infeasible; returns None if the clipped target is
    still off by more than 1e-6 MW at some hour.
    """
    T = s.horizon
    need = -np.asarray(prosumer_net, dtype=float)
    lo = np.sum([g.g_min for g in s.generators], axis=0)
    hi = np.sum([g.g_max for g in s.generators], axis=0)
    target = np.clip(need, lo, hi)
    if np.max(np.abs(target - need)) > 1e-6:
        return None
    P = Problem("min", name="rebalance")
    cols = [P.add_variables(g.id, T, g.g_min, g.g_max, cost=g.beta, quad=g.alpha) for g in s.generators]
    t = np.arange(T)
    P.add_constraints("balance", np.tile(t, len(cols)), np.concatenate(cols), 1.0, target, target, n=T)
    sol = solve(P)
    if not sol.optimal:
        return None
    return np.vstack([sol.value(g.id) for g in s.generators])
