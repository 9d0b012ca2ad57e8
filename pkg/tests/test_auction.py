import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from flexsched.auction import (
    AuctionConfig,
    BidBlock,
    BidCurve,
    ClearingInfeasible,
    SatelliteState,
    StateError,
    advance_state,
    clear_market,
    direct_response,
    gather_bid_prices,
    generate_bid_curve,
    initial_state,
    make_price_forecast,
    replay_energies,
    run_market_auction,
)
from flexsched.coopt import solve_cooptimization
from flexsched.scenario import Carrier, DemandSpec, GeneratorSpec, ProsumerSpec, series, synthesize_scenario

from conftest import E, battery_prosumer, consumer, heat_prosumer, micro_scenario, two_generators, with_prosumers
from physics import assert_physics


def flat_gen(beta, cap, T=1, gid="g", alpha=0.0, gmin=0.0):
    return GeneratorSpec(gid, alpha, beta, series(gmin, T), series(cap, T))


# -- forecast -----------------------------------------------------------------

def test_forecast_persists_previous_day():
    s = micro_scenario(T=48)
    history = np.full(29, 11.2)
    history[5] = 40.0
    fc = make_price_forecast(history, s, 29, 10)
    assert fc[0] == 40.0
    assert len(fc) == 10


def test_forecast_merit_order_without_history():
    T = 24
    s = with_prosumers([consumer("c", 30.0, T)], T, gens=(flat_gen(20.0, 100.0, T),))
    np.testing.assert_array_equal(make_price_forecast([], s, 0, 24), np.full(24, 20.0))


def test_forecast_length():
    s = micro_scenario()
    assert make_price_forecast([], s, 0, 1).shape == (1,)
    assert make_price_forecast([], s, 20, 24).shape == (4,)
    with pytest.raises(ValueError):
        make_price_forecast([], s, 0, 0)


# -- candidate prices ---------------------------------------------------------

def test_bid_prices_flexibility_window():
    s = with_prosumers([battery_prosumer(3)], 3)
    np.testing.assert_array_equal(gather_bid_prices(s, "bat", [10.0, 5.0, 8.0], 0), [5.0, 3000.0])
    np.testing.assert_array_equal(gather_bid_prices(s, "bat", [10.0, 5.0, 8.0], 0, flex_range=0), [10.0, 3000.0])


def test_bid_prices_opportunity():
    s = with_prosumers([heat_prosumer(3)], 3)
    assert 27.0 == pytest.approx(gather_bid_prices(s, "house", [50.0] * 3, 0)[0])
    alt = gather_bid_prices(s, "house", [50.0] * 3, 0, opportunity="divide")
    assert alt[0] == pytest.approx(30 / 0.9)


def test_bid_prices_ceiling_only():
    s = with_prosumers([consumer("c", 5.0, 3)], 3)
    np.testing.assert_array_equal(gather_bid_prices(s, "c", [10.0, 5.0, 8.0], 0), [3000.0])
    with pytest.raises(ValueError):
        gather_bid_prices(s, "c", [], 0)


# -- bid curves ---------------------------------------------------------------

@pytest.mark.parametrize("refine", [True, False])
def test_inflexible_consumer_bids_at_ceiling(refine):
    s = with_prosumers([consumer("c", 5.0, 3)], 3)
    j = s.prosumer("c")
    curve = generate_bid_curve(s, j, initial_state(j), [3000.0], [10.0, 10.0, 10.0], refine=refine)
    assert curve.blocks == (BidBlock(3000.0, -5.0),)


@pytest.mark.parametrize("refine", [True, False])
def test_battery_curve(refine):
    T = 3
    s = with_prosumers([battery_prosumer(T, power=4.0, e_max=20.0, e0=2.0, eff=0.9)], T)
    j = s.prosumer("bat")
    fc = [5.0, 20.0, 50.0]
    curve = generate_bid_curve(s, j, initial_state(j), [5.0, 3000.0], fc, refine=refine)
    assert curve.is_monotone()
    # cheap now: charge at the power cap
    assert curve.response(4.0) == (-4.0, -4.0)
    # expensive now: sell what is stored, capped by power
    high = curve.response(2999.0)
    assert high[0] == high[1] and high[0] == pytest.approx(2.0 * 0.9)
    if refine:
        # between consecutive steps the curve is the look-ahead optimum itself
        edges = [-3000.0] + [p for p, _ in curve.steps] + [3000.0]
        for a, b in zip(edges, edges[1:]):
            mid = 0.5 * (a + b)
            assert curve.response(mid)[0] == pytest.approx(direct_response(s, initial_state(j), fc, mid)[0])


def test_heat_curve_step_positions():
    T = 3
    s = with_prosumers([heat_prosumer(T, heat=10.0)], T)
    j = s.prosumer("house")
    Pi = gather_bid_prices(s, j, [50.0] * T, 0)
    literal = generate_bid_curve(s, j, initial_state(j), Pi, [50.0] * T, refine=False)
    exact = generate_bid_curve(s, j, initial_state(j), Pi, [50.0] * T, refine=True)
    hp_draw = -10.0 / 3
    # probing only the candidate prices moves the step to the opportunity price 27
    assert literal.response(26.0)[0] == pytest.approx(hp_draw)
    assert literal.response(28.0)[0] == pytest.approx(0.0)
    # the true switch is where lam / 3 = 30 / 0.9
    assert exact.response(99.0)[0] == pytest.approx(hp_draw)
    assert exact.response(101.0)[0] == pytest.approx(0.0)
    assert exact.steps[0][0] == pytest.approx(100.0)


def test_curve_response_and_monotone_flags():
    c = BidCurve("x", 0, (BidBlock(10.0, -3.0), BidBlock(20.0, 2.0)), -3.0, ((10.0, 0.0), (20.0, 2.0)))
    assert c.response(5.0) == (-3.0, -3.0)
    assert c.response(10.0) == (-3.0, 0.0)
    assert c.response(15.0) == (0.0, 0.0)
    assert c.response(25.0) == (2.0, 2.0)
    assert c.is_monotone()
    bad = BidCurve("x", 0, (), 0.0, ((10.0, -1.0),))
    assert not bad.is_monotone()


# -- clearing -----------------------------------------------------------------

def block_curve(pid, *blocks):
    return BidCurve(pid, 0, tuple(BidBlock(p, q) for p, q in blocks))


def test_clear_micro():
    res = clear_market([block_curve("load", (3000.0, -60.0))], two_generators(1), 0, 3000.0)
    assert res.optimal
    assert res.generation["g1"] == pytest.approx(60.0, abs=1e-9)
    assert res.generation["g2"] == pytest.approx(0.0, abs=1e-9)
    assert res.price == pytest.approx(11.2, abs=1e-9)
    assert abs(res.imbalance()) <= 1e-9


def test_clear_zero_bids():
    res = clear_market([], two_generators(1), 0, 3000.0)
    assert res.optimal
    assert all(v == 0.0 for v in res.generation.values())
    # the cheapest unit's marginal cost at zero output
    assert res.price == 10.0


def test_clear_capacity_binds():
    res = clear_market([block_curve("d", (25.0, -100.0))], [flat_gen(20.0, 50.0)], 0, 3000.0)
    assert res.optimal
    assert res.net("d") == pytest.approx(-50.0)
    assert res.generation["g"] == pytest.approx(50.0)
    assert 20.0 <= res.price <= 25.0


def test_clear_ceiling_demand_unserved_is_infeasible():
    res = clear_market([block_curve("d", (3000.0, -100.0))], [flat_gen(20.0, 50.0)], 0, 3000.0)
    assert res.status == "infeasible"
    assert "exceeds generation capacity" in res.message


def test_clear_ties_pro_rata():
    gens = [flat_gen(20.0, 30.0, gid="a"), flat_gen(20.0, 10.0, gid="b")]
    res = clear_market([block_curve("d", (3000.0, -20.0))], gens, 0, 3000.0)
    assert res.price == 20.0
    assert res.generation["a"] == pytest.approx(15.0)
    assert res.generation["b"] == pytest.approx(5.0)


def test_rounding_level_price_gap_is_a_tie():
    # the same breakpoint computed along two rounding paths
    p = 12.2561640263146
    bids = [block_curve("x", (p, -10.0)), block_curve("y", (p + 2e-13, -10.0))]
    res = clear_market(bids, [flat_gen(0.0, 10.0)], 0, 3000.0)
    assert res.price == pytest.approx(p, abs=1e-12)
    assert res.accepted["x"][0] == pytest.approx(-5.0)
    assert res.accepted["y"][0] == pytest.approx(-5.0)
    assert bids[1].response(p) == (-10.0, 0.0)


def welfare_lp(curves, gens, t):
    """Independent welfare maximization for linear-cost generators."""
    blocks = [b for c in curves for b in c.blocks]
    n_g = len(gens)
    cost = [g.beta for g in gens] + [(-b.price if b.quantity < 0 else b.price) for b in blocks]
    bounds = [(g.g_min[t], g.g_max[t]) for g in gens] + [(0, abs(b.quantity)) for b in blocks]
    row = [1.0] * n_g + [(-1.0 if b.quantity < 0 else 1.0) for b in blocks]
    res = linprog(cost, A_eq=[row], b_eq=[0.0], bounds=bounds, method="highs")
    assert res.status == 0
    return -res.fun, res.eqlin.marginals[0]


block = st.tuples(st.floats(-50, 200).map(lambda x: round(x, 1)), st.floats(-40, 40).filter(lambda q: abs(q) > 1e-3))


@settings(max_examples=60)
@given(st.lists(st.lists(block, min_size=1, max_size=4), min_size=1, max_size=4),
       st.lists(st.tuples(st.floats(0, 100).map(lambda x: round(x, 1)), st.floats(5, 80)), min_size=1, max_size=3))
def test_clearing_matches_independent_lp(curves, gens):
    curves = [block_curve(f"j{i}", *bs) for i, bs in enumerate(curves)]
    gens = [flat_gen(b, cap, gid=f"g{i}") for i, (b, cap) in enumerate(gens)]
    ours = clear_market(curves, gens, 0, 3000.0)
    assert ours.optimal
    w, _ = welfare_lp(curves, gens, 0)
    assert ours.welfare == pytest.approx(w, rel=1e-9, abs=1e-6)
    assert abs(ours.imbalance()) <= 1e-9
    for c in curves:
        for b, a in zip(c.blocks, ours.accepted[c.prosumer]):
            assert min(b.quantity, 0.0) - 1e-12 <= a <= max(b.quantity, 0.0) + 1e-12
            # blocks strictly in the money clear fully, those out of it not at all
            if b.quantity < 0 and b.price > ours.price or b.quantity > 0 and b.price < ours.price:
                assert a == pytest.approx(b.quantity)
            if b.quantity < 0 and b.price < ours.price or b.quantity > 0 and b.price > ours.price:
                assert a == 0.0


@settings(max_examples=40)
@given(st.lists(block, min_size=1, max_size=6),
       st.lists(st.tuples(st.floats(0.001, 0.2), st.floats(0, 60), st.floats(5, 80)), min_size=1, max_size=3))
def test_clearing_kkt_with_quadratic_costs(blocks, gens):
    gens = [flat_gen(b, cap, gid=f"g{i}", alpha=a) for i, (a, b, cap) in enumerate(gens)]
    res = clear_market([block_curve("j", *blocks)], gens, 0, 3000.0)
    assert res.optimal
    assert abs(res.imbalance()) <= 1e-9
    for g in gens:
        x = res.generation[g.id]
        mc = 2 * g.alpha * x + g.beta
        if mc < res.price - 1e-9:
            assert x == pytest.approx(g.g_max[0], abs=1e-9)
        if mc > res.price + 1e-9:
            assert x == pytest.approx(g.g_min[0], abs=1e-9)


# -- state roll-over ----------------------------------------------------------

def test_advance_battery_charge():
    T = 3
    s = with_prosumers([battery_prosumer(T, power=10.0, e_max=50.0, e0=0.0, eff=0.9)], T)
    st0 = initial_state(s.prosumer("bat"))
    st1, commit = advance_state(s, st0, 5.0, -10.0, [5.0, 50.0, 50.0])
    assert st1.storage_energy[E] == pytest.approx(9.0)
    assert st1.hour == 1
    assert commit.values["ch:electricity"] == pytest.approx(10.0)


def test_advance_zero_cleared():
    T = 3
    s = with_prosumers([battery_prosumer(T, power=10.0, e_max=50.0, e0=7.0, eff=0.9)], T)
    st0 = initial_state(s.prosumer("bat"))
    st1, _ = advance_state(s, st0, 20.0, 0.0, [20.0, 20.0, 20.0])
    assert st1.storage_energy[E] == pytest.approx(7.0, abs=1e-9)
    assert st1.hour == st0.hour + 1


def flex_consumer(T, total=10.0):
    fmin = series(np.zeros(T))
    fmax = series(np.full(T, total))
    return ProsumerSpec("fx", (), (), (DemandSpec(E, series(0.0, T), fmin, fmax, total),), None)


def test_advance_flexible_demand():
    T = 3
    s = with_prosumers([flex_consumer(T)], T)
    st0 = initial_state(s.prosumer("fx"))
    st1, commit = advance_state(s, st0, 10.0, -5.0, [10.0, 10.0, 10.0])
    assert st1.flex_energy[E] == pytest.approx(5.0)
    assert commit.values["flex:electricity"] == pytest.approx(5.0)


def test_advance_rejects_impossible_quantity():
    T = 3
    s = with_prosumers([battery_prosumer(T, power=10.0, e_max=50.0, e0=0.0)], T)
    with pytest.raises(StateError):
        advance_state(s, initial_state(s.prosumer("bat")), 5.0, -25.0, [5.0] * 3)


def test_direct_response_brackets_breakpoint():
    T = 3
    s = with_prosumers([heat_prosumer(T)], T)
    st0 = initial_state(s.prosumer("house"))
    lo, hi = direct_response(s, st0, [50.0] * T, 100.0)
    assert lo == pytest.approx(-10.0 / 3) and hi == pytest.approx(0.0, abs=1e-9)
    assert direct_response(s, st0, [50.0] * T, 60.0) == pytest.approx((-10.0 / 3, -10.0 / 3))


# -- full rolling loop --------------------------------------------------------

def test_micro_matches_coopt(micro):
    res = run_market_auction(micro)
    ref = solve_cooptimization(micro)
    np.testing.assert_allclose(res.prices, ref.prices, atol=1e-6)
    for g in ref.generators:
        np.testing.assert_allclose(res.generators[g], ref.generators[g], atol=1e-6)
    assert res.cost == pytest.approx(ref.cost, rel=1e-9)


def test_single_hour_is_economic_dispatch():
    T = 1
    s = with_prosumers([consumer("c", 60.0, T)], T)
    res = run_market_auction(s, AuctionConfig(lookahead=1))
    assert res.prices[0] == pytest.approx(11.2)
    assert res.diagnostics["clearings"] == 1


def test_lookahead_beyond_horizon():
    with pytest.raises(ValueError, match="lookahead"):
        run_market_auction(micro_scenario(T=6), AuctionConfig(lookahead=24))


def test_clearing_window_rejected():
    with pytest.raises(ValueError, match="only 1 h windows"):
        AuctionConfig(clearing_window=2)


def test_infeasible_hour_aborts():
    T = 3
    s = with_prosumers([consumer("c", 60.0, T)], T, gens=(flat_gen(20.0, 50.0, T),))
    with pytest.raises(ClearingInfeasible) as err:
        run_market_auction(s, AuctionConfig(lookahead=3))
    assert err.value.hour == 0


def check_run(s, res):
    ref = solve_cooptimization(s)
    assert res.cost >= ref.cost * (1 - 1e-9)
    assert np.max(np.abs(res.imbalance())) <= 1e-4
    assert_physics(res, s)
    for t in range(s.horizon):
        lam = res.prices[t]
        for g in s.generators:
            x = res.generators[g.id][t]
            mc = 2 * g.alpha * x + g.beta
            if mc < lam - 1e-3:
                assert x == pytest.approx(g.g_max[t], abs=1e-3)
            if mc > lam + 1e-3:
                assert x == pytest.approx(g.g_min[t], abs=1e-3)
    for (t, j), curve in res.diagnostics["curves"].items():
        assert curve.is_monotone()
    for j in s.prosumers:
        states = res.diagnostics["states"][j.id]
        replay = replay_energies(j, states[0], res.diagnostics["commitments"][j.id])
        for st, (e_s, e_f) in zip(states[1:], replay):
            assert dict(st.storage_energy) == e_s
            assert dict(st.flex_energy) == e_f
    return ref


@pytest.mark.parametrize("seed", [0, 3])
def test_synthesized_run(seed):
    s = synthesize_scenario(8, 24, seed)
    res = run_market_auction(s)
    ref = check_run(s, res)
    assert res.cost <= 1.25 * ref.cost


def test_short_lookahead_run():
    s = synthesize_scenario(6, 24, 5)
    check_run(s, run_market_auction(s, AuctionConfig(lookahead=6)))


def test_literal_and_divide_modes_run():
    s = synthesize_scenario(6, 24, 1)
    for cfg in (AuctionConfig(refine=False), AuctionConfig(opportunity="divide", refine=False)):
        res = run_market_auction(s, cfg)
        assert np.max(np.abs(res.imbalance())) <= 1e-4


def test_bid_log(tmp_path):
    from flexsched.auction import write_bid_log
    s = synthesize_scenario(6, 24, 2)
    res = run_market_auction(s)
    path = write_bid_log(res.diagnostics["bid_log"], tmp_path / "bids.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "hour,prosumer,block,price,quantity,accepted"
    assert len(lines) == len(res.diagnostics["bid_log"]) + 1
