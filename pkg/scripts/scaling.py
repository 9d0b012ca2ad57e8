"""Runtime scaling over horizons and thread counts, with growth per horizon tripling.

    python scripts/scaling.py --agents 30 --horizons 24,72,168 --methods coopt,auction --out runs/scale
"""
import argparse
from pathlib import Path

from flexsched.bench import ExperimentMatrix, horizon_growth, run_scaling_matrix


def ints(text):
    return tuple(int(x) for x in text.split(","))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=ints, default=(30,))
    ap.add_argument("--horizons", type=ints, default=(24, 72, 168))
    ap.add_argument("--methods", type=lambda t: tuple(t.split(",")), default=("coopt", "auction"))
    ap.add_argument("--threads", type=ints, default=(1, 0))
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--out", type=Path, default=None)
    a = ap.parse_args()

    m = ExperimentMatrix(a.methods, a.horizons, a.agents, a.threads, (0,), a.repeats)
    rep = run_scaling_matrix(m, a.out)
    for c in rep.cells:
        print(f"{c.method:8s} n={c.agents:<3d} T={c.horizon:<4d} threads={c.threads:<3d} "
              f"{c.wall_time:8.3f} s  x{c.normalized_runtime:.2f}")
    for n in a.agents:
        for th in m.thread_counts():
            growth = {meth: horizon_growth(rep, meth, n, th) for meth in a.methods}
            print(f"n={n} threads={th}: growth per tripling " + "  ".join(f"{k} x{v:.2f}" for k, v in growth.items()))


if __name__ == "__main__":
    main()
