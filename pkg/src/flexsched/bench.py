"""Three-way method comparison and the problem-size x thread-count scaling matrix."""
from __future__ import annotations

import csv
import json
import math
import platform
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .admm import AdmmConfig, run_price_response
from .auction import AuctionConfig, run_market_auction, write_bid_log
from .coopt import solve_cooptimization
from .dispatch import DispatchResult
from .runtime import default_threads, profile_report
from .scenario import Scenario, scenario_digest, synthesize_scenario

METHODS = ("coopt", "admm", "auction")


@dataclass
class ExperimentMatrix:
    methods: tuple[str, ...] = METHODS
    horizons: tuple[int, ...] = (24, 72, 168)
    agents: tuple[int, ...] = (30, 60, 90)
    threads: tuple[int, ...] = (1, 0)  # 0 = all available cores
    seeds: tuple[int, ...] = (0,)
    repeats: int = 1

    def __post_init__(self):
        for name in ("methods", "horizons", "agents", "threads", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"experiment matrix axis {name!r} is empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method {bad[0]!r}; choose from {', '.join(METHODS)}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def thread_counts(self) -> list[int]:
        return sorted({t if t > 0 else default_threads() for t in self.threads})


@dataclass
class Cell:
    method: str
    agents: int
    horizon: int
    threads: int
    seed: int
    status: str = "pending"
    cost: float = math.nan
    wall_time: float = math.nan
    iterations: int | None = None
    solves: int | None = None
    converged: bool | None = None
    normalized_runtime: float = math.nan
    scenario_digest: str = ""
    price_file: str = ""
    error: str = ""


@dataclass
class ComparisonReport:
    cells: list[Cell] = field(default_factory=list)
    results: dict = field(default_factory=dict)

    def cell(self, method: str, **kw) -> Cell:
        hits = [c for c in self.cells if c.method == method and all(getattr(c, k) == v for k, v in kw.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} cells match {method} {kw}")
        return hits[0]

    def costs(self) -> dict[str, float]:
        return {c.method: c.cost for c in self.cells if c.status == "ok"}

    def ordering(self, admm_tol: float = 1e-2) -> dict[str, bool]:
        """Cost ordering: coopt is a lower bound; admm within ``admm_tol`` of it."""
        c = self.costs()
        out = {}
        if "coopt" in c and "admm" in c:
            out["coopt<=admm"] = c["coopt"] <= c["admm"] * (1 + 1e-9)
            out["admm_gap<=tol"] = (c["admm"] - c["coopt"]) <= admm_tol * abs(c["coopt"])
        if "coopt" in c and "auction" in c:
            out["coopt<=auction"] = c["coopt"] <= c["auction"] * (1 + 1e-9)
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        names = list(Cell.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for c in self.cells:
                w.writerow([getattr(c, n) for n in names])
        return path


def run_method(method: str, s: Scenario, *, threads: int | None = None, admm: AdmmConfig | None = None,
               auction: AuctionConfig | None = None) -> DispatchResult:
    if method == "coopt":
        return solve_cooptimization(s)
    if method == "admm":
        cfg = admm or AdmmConfig()
        if threads is not None:
            cfg = AdmmConfig(**{**asdict(cfg), "threads": threads})
        return run_price_response(s, cfg)
    if method == "auction":
        cfg = auction or AuctionConfig()
        if threads is not None:
            cfg = AuctionConfig(**{**asdict(cfg), "threads": threads})
        return run_market_auction(s, cfg)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def write_outputs(res: DispatchResult, out_dir) -> Path:
    """Dispatch CSVs plus method-specific traces (ADMM residuals, auction bids, event profile)."""
    out = res.to_csv(out_dir)
    d = res.diagnostics
    if "trace" in d:
        d["trace"].to_csv(out / "residuals.csv")
    if "bid_log" in d:
        write_bid_log(d["bid_log"], out / "bids.csv")
    events = d.get("events")
    if events is not None and len(events):
        events.to_csv(out / "events.csv")
        profile_report(events).to_csv(out / "profile.csv")
    return out


def _run_cell(cell: Cell, s: Scenario, runner: Callable[[], DispatchResult], out_dir: Path | None, repeats: int = 1):
    cell.scenario_digest = scenario_digest(s)
    try:
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            res = runner()
            times.append(time.perf_counter() - t0)
    except Exception as exc:  # noqa: BLE001 - failures are recorded per cell
        cell.status = "failed"
        cell.error = f"{type(exc).__name__}: {exc}"
        traceback.print_exc()
        return None
    cell.status = "ok"
    cell.wall_time = float(np.median(times))
    cell.cost = float(res.cost)
    cell.iterations = res.diagnostics.get("iterations")
    cell.solves = res.diagnostics.get("solves")
    cell.converged = bool(res.converged)
    if out_dir is not None:
        tag = f"_s{cell.seed}" if cell.seed >= 0 else ""
        sub = out_dir / f"{cell.method}_n{cell.agents}_T{cell.horizon}_th{cell.threads}{tag}"
        write_outputs(res, sub)
        cell.price_file = str(sub / "prices.csv")
    return res


def write_manifest(out_dir, command: str, config: dict, report: ComparisonReport | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "platform": platform.platform(),
        "cpu_count": default_threads(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": config,
    }
    if report is not None:
        doc["cells"] = [asdict(c) for c in report.cells]
        doc["ordering"] = report.ordering()
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, default=str))
    return path


def run_comparison(s: Scenario, methods: Sequence[str] = METHODS, out_dir=None, *, threads: int | None = None,
                   admm: AdmmConfig | None = None, auction: AuctionConfig | None = None) -> ComparisonReport:
    """All requested methods on the identical scenario object."""
    if not methods:
        raise ValueError("no methods requested")
    out = Path(out_dir) if out_dir is not None else None
    report = ComparisonReport()
    th = threads or default_threads()
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        cell = Cell(m, s.n_agents, s.horizon, th, -1)
        res = _run_cell(cell, s, lambda m=m: run_method(m, s, threads=threads, admm=admm, auction=auction), out)
        report.cells.append(cell)
        if res is not None:
            report.results[m] = res
    if out is not None:
        report.to_csv(out / "comparison.csv")
    return report


def normalize_runtimes(cells: Sequence[Cell]) -> None:
    """Each (method, threads, seed) group is scaled by its smallest problem's wall time."""
    groups: dict[tuple, list[Cell]] = {}
    for c in cells:
        groups.setdefault((c.method, c.threads, c.seed), []).append(c)
    for group in groups.values():
        ok = [c for c in group if c.status == "ok"]
        if not ok:
            continue
        base = min(ok, key=lambda c: (c.agents * c.horizon, c.horizon, c.agents))
        for c in ok:
            c.normalized_runtime = c.wall_time / base.wall_time if base.wall_time > 0 else math.nan


def run_scaling_matrix(m: ExperimentMatrix, out_dir=None, *, admm: AdmmConfig | None = None,
                       auction: AuctionConfig | None = None) -> ComparisonReport:
    """Every (method, agents, horizon, threads, seed) cell, run sequentially; failures stay in their cell."""
    out = Path(out_dir) if out_dir is not None else None
    report = ComparisonReport()
    auction = auction or AuctionConfig(keep_curves=False)
    for seed in m.seeds:
        for n in m.agents:
            for T in m.horizons:
                s = synthesize_scenario(n, T, seed)
                for th in m.thread_counts():
                    for meth in m.methods:
                        cell = Cell(meth, n, T, th, seed)
                        _run_cell(cell, s, lambda: run_method(meth, s, threads=th, admm=admm, auction=auction),
                                  out, m.repeats)
                        report.cells.append(cell)
    normalize_runtimes(report.cells)
    if out is not None:
        report.to_csv(out / "scaling.csv")
    return report


def horizon_growth(report: ComparisonReport, method: str, agents: int, threads: int, seed: int = 0) -> float:
    """Runtime growth factor per tripling of the horizon, from a log-log fit over all horizons."""
    cells = sorted((c for c in report.cells if c.method == method and c.agents == agents and c.threads == threads
                    and c.seed == seed and c.status == "ok"), key=lambda c: c.horizon)
    if len(cells) < 2:
        raise ValueError(f"need at least two horizons for {method}")
    x = np.log([c.horizon for c in cells])
    y = np.log([c.wall_time for c in cells])
    slope = float(np.polyfit(x, y, 1)[0])
    return 3.0 ** slope
