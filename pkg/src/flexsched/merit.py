"""Truthful generator supply and the merit-order price that meets a demand level."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .scenario import GeneratorSpec


def supply(gens: Sequence[GeneratorSpec], price: float, t: int) -> float:
    """Total output when every generator produces where ``2 alpha g + beta = price``.

    Generators with ``alpha = 0`` are at capacity once the price reaches ``beta``.
    """
    total = 0.0
    for g in gens:
        lo, hi = float(g.g_min[t]), float(g.g_max[t])
        if g.alpha > 0:
            total += min(max((price - g.beta) / (2 * g.alpha), lo), hi)
        else:
            total += hi if price >= g.beta else lo
    return total


def merit_order_price(gens: Sequence[GeneratorSpec], demand: float, t: int, ceiling: float) -> float:
    """Lowest price at which truthful supply covers ``demand``.

    Returns ``ceiling`` if capacity is short and the cheapest linear cost if
    must-run output already covers the demand.
    """
    if not gens:
        raise ValueError("no generators")
    must_run = sum(float(g.g_min[t]) for g in gens)
    if demand <= must_run:
        return float(min(g.beta for g in gens))
    if demand > sum(float(g.g_max[t]) for g in gens):
        return float(ceiling)
    bps = sorted({g.beta + 2 * g.alpha * float(g.g_min[t]) for g in gens}
                 | {g.beta + 2 * g.alpha * float(g.g_max[t]) for g in gens})
    prev = -np.inf
    for bp in bps:
        if supply(gens, bp, t) >= demand:
            if prev == -np.inf:
                return float(bp)
            s_prev = supply(gens, prev, t)
            slope = sum(1 / (2 * g.alpha) for g in gens
                        if g.alpha > 0 and g.beta + 2 * g.alpha * g.g_min[t] <= prev
                        and g.beta + 2 * g.alpha * g.g_max[t] >= bp)
            if slope > 0:
                lam = prev + (demand - s_prev) / slope
                if lam <= bp:
                    return float(lam)
            return float(bp)
        prev = bp
    return float(ceiling)


def merit_order_prices(gens: Sequence[GeneratorSpec], demand: np.ndarray, ceiling: float) -> np.ndarray:
    return np.array([merit_order_price(gens, float(d), t, ceiling) for t, d in enumerate(demand)])
