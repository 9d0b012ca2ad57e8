"""Command line: ``run``, ``compare``, ``scale``, ``synth``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .admm import AdmmConfig
from .auction import AuctionConfig
from .bench import METHODS, ExperimentMatrix, run_comparison, run_method, run_scaling_matrix, write_manifest, write_outputs
from .scenario import load_scenario, save_scenario, scenario_digest, synthesize_scenario


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(text: str) -> tuple[str, ...]:
    out = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [m for m in out if m not in METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown method {bad[0]!r}; choose from {', '.join(METHODS)}")
    return out


def _add_method_flags(p, threads: bool = True):
    p.add_argument("--rho", type=float, default=1.0, help="initial ADMM penalty")
    p.add_argument("--tol", type=float, default=0.1, help="ADMM primal and dual residual tolerance")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--lookahead", type=int, default=24, help="auction look-ahead window, hours")
    p.add_argument("--clearing-window", type=int, default=1, help="auction clearing window, hours (only 1)")
    p.add_argument("--opportunity", choices=("multiply", "divide"), default="multiply",
                   help="converter opportunity price: carrier price times or divided by efficiency")
    p.add_argument("--literal-prices", action="store_true",
                   help="bid curves from the candidate price set only, without exact breakpoints")
    if threads:
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")


def _configs(a):
    threads = a.threads if isinstance(a.threads, int) else None
    admm = AdmmConfig(rho0=a.rho, primal_tol=a.tol, dual_tol=a.tol, max_iters=a.max_iters, threads=threads)
    auction = AuctionConfig(lookahead=a.lookahead, clearing_window=a.clearing_window, opportunity=a.opportunity,
                            refine=not a.literal_prices, threads=threads, keep_curves=False)
    return admm, auction


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flexsched", description="Multi-carrier flexibility scheduling simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one coordination method on a scenario")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_method_flags(p)

    p = sub.add_parser("compare", help="run all methods on one scenario")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--methods", type=_methods, default=METHODS)
    _add_method_flags(p)

    p = sub.add_parser("scale", help="problem size x thread count scaling matrix")
    p.add_argument("--agents", type=_ints, default=(30, 60, 90))
    p.add_argument("--horizons", type=_ints, default=(24, 72, 168))
    p.add_argument("--methods", type=_methods, default=METHODS)
    p.add_argument("--threads", type=_ints, default=(1, 0), help="thread counts; 0 = all cores")
    p.add_argument("--seed", type=_ints, default=(0,), help="one or more seeds")
    p.add_argument("--repeats", type=int, default=1, help="timed repeats per cell (median reported)")
    p.add_argument("--out", type=Path, required=True)
    _add_method_flags(p, threads=False)

    p = sub.add_parser("synth", help="write a synthetic scenario")
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="scenario YAML path; the CSV is written next to it")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        return _dispatch(ap, a)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(ap, a) -> int:
    if a.command == "synth":
        s = synthesize_scenario(a.agents, a.horizon, a.seed)
        path = save_scenario(s, a.out)
        print(f"{path} ({len(s.generators)} generators, {len(s.prosumers)} prosumers, digest {scenario_digest(s)})")
        return 0

    admm, auction = _configs(a)
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(a).items()}
    if a.command == "run":
        s = load_scenario(a.scenario)
        res = run_method(a.method, s, threads=a.threads, admm=admm, auction=auction)
        write_outputs(res, a.out)
        config["scenario_digest"] = scenario_digest(s)
        write_manifest(a.out, "run", config)
        print(f"{a.method}: cost {res.cost:.6g} EUR, converged={res.converged}, "
              f"wall time {res.diagnostics.get('wall_time', float('nan')):.3g} s")
        return 0
    if a.command == "compare":
        if not a.methods:
            ap.error("no methods given")
        s = load_scenario(a.scenario)
        rep = run_comparison(s, a.methods, a.out, threads=a.threads, admm=admm, auction=auction)
        config["scenario_digest"] = scenario_digest(s)
        write_manifest(a.out, "compare", config, rep)
        for c in rep.cells:
            print(f"{c.method:8s} {c.status:6s} cost {c.cost:.6g} EUR  {c.wall_time:.3g} s")
        return 0 if all(c.status == "ok" for c in rep.cells) else 1
    if a.command == "scale":
        m = ExperimentMatrix(a.methods, a.horizons, a.agents, a.threads, a.seed, a.repeats)
        rep = run_scaling_matrix(m, a.out, admm=admm, auction=auction)
        write_manifest(a.out, "scale", config, rep)
        for c in rep.cells:
            print(f"{c.method:8s} n={c.agents:<3d} T={c.horizon:<4d} threads={c.threads:<3d} {c.status:6s} "
                  f"{c.wall_time:8.3g} s  x{c.normalized_runtime:.3g}")
        return 0 if all(c.status == "ok" for c in rep.cells) else 1
    ap.error(f"unknown command {a.command}")
    return 2
