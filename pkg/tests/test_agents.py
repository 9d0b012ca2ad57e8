import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexsched.agents import (
    AdmmPenalty,
    Forecast,
    HorizonMismatch,
    Window,
    build_generator_problem,
    build_prosumer_problem,
    net_power_of,
    prosumer_values,
)
from flexsched.qp import solve
from flexsched.scenario import (
    Carrier,
    ConverterSpec,
    DemandSpec,
    GeneratorSpec,
    ProsumerSpec,
    ScenarioError,
    series,
    synthesize_scenario,
)

from conftest import E, Q, battery_prosumer, consumer, heat_prosumer, with_prosumers
from physics import prosumer_violations


def solve_prosumer(s, pid, mode, window=None):
    sol = solve(build_prosumer_problem(s, pid, mode, window))
    assert sol.optimal, sol.status
    return sol


def test_pure_consumer_net_power():
    s = with_prosumers([consumer("c", 5.0, 6)], 6)
    for lam in (0.0, 40.0, 3000.0):
        sol = solve_prosumer(s, "c", Forecast(np.full(6, lam)))
        np.testing.assert_allclose(net_power_of(sol), -5.0)


@pytest.mark.parametrize("lam,uses", [(5.0, "hp"), (200.0, "boiler")])
def test_heat_source_follows_marginal_cost(lam, uses):
    T = 4
    s = with_prosumers([heat_prosumer(T, heat=10.0)], T)
    v = prosumer_values(solve_prosumer(s, "house", Forecast(np.full(T, lam))))
    # marginal heat cost: lam / 3 via the heat pump vs 30 / 0.9 via the boiler
    if uses == "hp":
        np.testing.assert_allclose(v["con:hp"], 10.0 / 3, atol=1e-7)
        np.testing.assert_allclose(v["x:boiler"], 0.0, atol=1e-7)
    else:
        np.testing.assert_allclose(v["x:boiler"], 10.0 / 0.9, atol=1e-7)
        np.testing.assert_allclose(v["con:hp"], 0.0, atol=1e-7)


def brute_force_battery(prices, power, e_max, e0, eff, steps=5):
    grid = np.linspace(0, power, steps)
    best, arg = np.inf, None
    T = len(prices)
    for moves in itertools.product(grid, repeat=2 * T):
        ch, dc = np.array(moves[:T]), np.array(moves[T:])
        e = e0 + np.cumsum(eff * ch - dc / eff)
        if np.any(e < -1e-9) or np.any(e > e_max + 1e-9):
            continue
        cost = -float(np.dot(prices, dc - ch))
        if cost < best - 1e-12:
            best, arg = cost, (ch, dc)
    return best, arg


def test_battery_arbitrage_matches_brute_force():
    prices = np.array([50.0, 10.0, 50.0])
    # unit efficiency keeps the optimum on the integer grid
    T, power, e_max, eff = 3, 4.0, 20.0, 1.0
    s = with_prosumers([battery_prosumer(T, power, e_max, e0=0.0, eff=eff)], T)
    sol = solve_prosumer(s, "bat", Forecast(prices))
    v = prosumer_values(sol)
    best, (ch, dc) = brute_force_battery(prices, power, e_max, 0.0, eff)
    assert -float(prices @ v["p"]) == pytest.approx(best, abs=1e-6)
    assert v["ch:electricity"][1] == pytest.approx(power)
    assert v["dc:electricity"][1] == pytest.approx(0.0, abs=1e-9)
    assert v["dc:electricity"][2] > 0
    np.testing.assert_allclose(v["ch:electricity"], ch, atol=1e-6)
    np.testing.assert_allclose(v["dc:electricity"], dc, atol=1e-6)


def test_battery_from_midpoint_empties_itself():
    # stored energy has no terminal value, so a half-full battery sells at every positive price
    prices = np.array([50.0, 10.0, 50.0])
    s = with_prosumers([battery_prosumer(3, 4.0, 20.0, e0=10.0, eff=0.9)], 3)
    v = prosumer_values(solve_prosumer(s, "bat", Forecast(prices)))
    np.testing.assert_allclose(v["dc:electricity"], [4.0, 1.0, 4.0], atol=1e-9)
    assert v["soc:electricity"][-1] == pytest.approx(0.0, abs=1e-9)


def test_chp_net_power():
    T = 3
    chp = ConverterSpec("chp", Carrier.METHANE, E, 20.0, efficiency_electric=0.5, efficiency_nonelectric=0.4,
                        produces_heat=True)
    j = ProsumerSpec("chp", (chp,), (), (DemandSpec(E, series(4.0, T)), DemandSpec(Q, series(8.0, T))), None)
    s = with_prosumers([j], T)
    sol = solve_prosumer(s, "chp", Forecast(np.full(T, 100.0)))
    np.testing.assert_allclose(net_power_of(sol), 6.0, atol=1e-7)


@pytest.mark.parametrize("alpha,beta,lam,expect", [(0.0, 20.0, 30.0, 100.0), (0.0, 20.0, 10.0, 5.0),
                                                   (0.01, 10.0, 11.2, 60.0)])
def test_generator_response(alpha, beta, lam, expect):
    T = 4
    g = GeneratorSpec("g", alpha, beta, series(5.0, T), series(100.0, T))
    sol = solve(build_generator_problem(g, np.full(T, lam)))
    np.testing.assert_allclose(net_power_of(sol), expect, atol=1e-5)


def test_horizon_mismatch():
    T = 4
    g = GeneratorSpec("g", 0.0, 20.0, series(0.0, T), series(100.0, T))
    with pytest.raises(HorizonMismatch):
        build_generator_problem(g, np.zeros(T + 1))
    s = with_prosumers([consumer("c", 1.0, T)], T)
    with pytest.raises(HorizonMismatch):
        build_prosumer_problem(s, "c", Forecast(np.zeros(T - 1)))
    with pytest.raises(HorizonMismatch):
        build_prosumer_problem(s, "c", AdmmPenalty(np.zeros(T), 1.0, np.zeros(2)))
    with pytest.raises(HorizonMismatch):
        Window(3, 4).resolve(T)


def test_unknown_carrier_reference():
    T = 2
    boiler = ConverterSpec("b", Carrier.OIL, Q, 5.0, efficiency_nonelectric=0.9)
    j = ProsumerSpec("x", (boiler,), (), (DemandSpec(Q, series(1.0, T)),), None)
    s = with_prosumers([j], T)
    with pytest.raises(ScenarioError, match="unknown carrier"):
        build_prosumer_problem(s, "x", Forecast(np.zeros(T)))


def test_net_power_needs_optimal():
    T = 2
    g = GeneratorSpec("g", 0.0, 1.0, series(0.0, T), series(1.0, T))
    P = build_generator_problem(g, np.zeros(T))
    P.add_constraint("impossible", {0: 1.0}, 5.0, 5.0)
    with pytest.raises(ValueError):
        net_power_of(solve(P))


# -- properties over synthesized prosumers ----------------------------------

def synthesized_prosumer(seed, idx):
    s = synthesize_scenario(12, 24, seed)
    j = s.prosumers[idx % len(s.prosumers)]
    return s, j


prosumer_pick = st.tuples(st.integers(0, 10_000), st.integers(0, 20))


@settings(max_examples=30)
@given(prosumer_pick, st.floats(0.0, 200.0))
def test_prosumer_physics(pick, lam):
    s, j = synthesized_prosumer(*pick)
    v = prosumer_values(solve_prosumer(s, j.id, Forecast(np.full(s.horizon, lam))))
    worst = prosumer_violations(j, v, s.horizon)
    assert max(worst.values(), default=0.0) <= 1e-6, worst


@settings(max_examples=30)
@given(prosumer_pick, st.floats(0.0, 150.0), st.floats(0.1, 150.0))
def test_monotone_price_response(pick, lam, step):
    s, j = synthesized_prosumer(*pick)
    T = s.horizon
    lo = solve_prosumer(s, j.id, Forecast(np.full(T, lam)))
    hi = solve_prosumer(s, j.id, Forecast(np.full(T, lam + step)))
    consumption_lo, consumption_hi = -net_power_of(lo).sum(), -net_power_of(hi).sum()
    assert consumption_lo >= consumption_hi - 1e-6


@settings(max_examples=20)
@given(prosumer_pick, st.floats(5.0, 120.0), st.floats(0.1, 10.0))
def test_penalty_fixed_point(pick, lam, rho):
    s, j = synthesized_prosumer(*pick)
    T = s.horizon
    rng = np.random.default_rng(pick[0])
    prices = lam + rng.uniform(-5, 5, T)
    p_star = net_power_of(solve_prosumer(s, j.id, Forecast(prices)))
    again = net_power_of(solve_prosumer(s, j.id, AdmmPenalty(prices, rho, p_star, 0.0)))
    # interior-point accuracy on the squared penalty
    np.testing.assert_allclose(again, p_star, atol=1e-4)


@settings(max_examples=20)
@given(st.floats(0.001, 0.1), st.floats(0.0, 50.0), st.floats(0.0, 100.0), st.floats(0.1, 10.0))
def test_generator_penalty_fixed_point(alpha, beta, lam, rho):
    T = 3
    g = GeneratorSpec("g", alpha, beta, series(0.0, T), series(80.0, T))
    prices = np.full(T, lam)
    g_star = net_power_of(solve(build_generator_problem(g, prices)))
    again = net_power_of(solve(build_generator_problem(g, prices, AdmmPenalty(prices, rho, g_star, 0.0))))
    np.testing.assert_allclose(again, g_star, atol=1e-5)
