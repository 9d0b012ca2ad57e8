import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from flexsched.scenario import (
    Carrier,
    DemandSpec,
    GeneratorSpec,
    ScenarioError,
    StorageSpec,
    agent_split,
    load_scenario,
    save_scenario,
    scenario_digest,
    series,
    synthesize_scenario,
    validate_scenario,
)

from conftest import battery_prosumer, micro_scenario, with_prosumers

T = 24


def write_doc(tmp_path, doc, cols=None, T=T):
    cols = cols or {}
    (tmp_path / "s.yaml").write_text(yaml.safe_dump(doc))
    if cols:
        names = list(cols)
        lines = [",".join(names)] + [",".join(str(cols[n][t]) for n in names) for t in range(len(cols[names[0]]))]
        (tmp_path / "ts.csv").write_text("\n".join(lines) + "\n")
    return tmp_path / "s.yaml"


def base_doc():
    return {
        "meta": {"horizon": T, "timeseries": "ts.csv"},
        "carriers": {"methane": {"price": 30}},
        "generators": [
            {"id": "g1", "alpha": 0.01, "beta": 10, "g_min": 0, "g_max": "g1_max"},
            {"id": "g2", "alpha": 0.02, "beta": 20, "g_min": 0, "g_max": 100},
        ],
        "prosumers": [{"id": "load", "demands": [{"carrier": "electricity", "base": "load"}]}],
    }


def test_load_well_formed(tmp_path):
    path = write_doc(tmp_path, base_doc(), {"g1_max": [100.0] * T, "load": [60.0] * T})
    s = load_scenario(path)
    assert s.horizon == 24
    assert [g.id for g in s.generators] == ["g1", "g2"]
    assert s.inflexible_demand()[5] == 60.0
    assert s.price(Carrier.METHANE)[0] == 30.0


def test_load_gmin_above_gmax_names_generator_and_hour(tmp_path):
    gmax = [100.0] * T
    gmax[3] = -1.0
    doc = base_doc()
    doc["generators"][0]["g_min"] = 0
    path = write_doc(tmp_path, doc, {"g1_max": gmax, "load": [10.0] * T})
    with pytest.raises(ScenarioError, match=r"g1.*t=3"):
        load_scenario(path)


def test_load_short_series(tmp_path):
    path = write_doc(tmp_path, base_doc(), {"g1_max": [100.0] * (T - 1), "load": [60.0] * (T - 1)})
    with pytest.raises(ScenarioError, match="timeseries length mismatch"):
        load_scenario(path)


def test_load_rejects_unknown_keys(tmp_path):
    doc = base_doc()
    doc["generators"][0]["colour"] = "red"
    path = write_doc(tmp_path, doc, {"g1_max": [100.0] * T, "load": [60.0] * T})
    with pytest.raises(ScenarioError, match="unknown keys"):
        load_scenario(path)


def test_load_malformed(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("meta: [unclosed\n")
    with pytest.raises(ScenarioError):
        load_scenario(p)
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.yaml")


def test_validate_micro_is_clean():
    assert validate_scenario(micro_scenario()).ok


def test_validate_initial_energy_above_max():
    s = with_prosumers([battery_prosumer(T, e_max=20.0, e0=25.0)], T)
    rep = validate_scenario(s)
    assert len(rep) == 1
    assert "initial_energy" in str(rep.violations[0])


def test_validate_capacity_shortfall():
    assert not validate_scenario(micro_scenario(demand=250.0)).ok
    # 150 MW against 200 MW of capacity is fine until g2 drops to 40 MW at one hour
    assert validate_scenario(micro_scenario(demand=150.0)).ok
    gmax = np.full(T, 100.0)
    gmax[7] = 40.0
    g2 = GeneratorSpec("g2", 0.02, 20.0, series(0.0, T), series(gmax))
    short = micro_scenario(demand=150.0).with_generators((micro_scenario().generators[0], g2))
    rep = validate_scenario(short)
    msgs = [str(v) for v in rep.violations]
    assert any("exceeds generation capacity" in m and "t=7" in m for m in msgs)
    assert sum("exceeds generation capacity" in m for m in msgs) == 1


def test_validate_is_pure():
    s = micro_scenario()
    before = scenario_digest(s)
    validate_scenario(s)
    assert scenario_digest(s) == before


def test_synth_agent_split():
    s30 = synthesize_scenario(30, 24, seed=1)
    assert (len(s30.generators), len(s30.prosumers)) == (16, 14)
    s40 = synthesize_scenario(40, 24, seed=1)
    assert (len(s40.generators), len(s40.prosumers)) == (22, 18)


def test_synth_is_deterministic(tmp_path):
    a = save_scenario(synthesize_scenario(12, 24, 3), tmp_path / "a" / "s.yaml")
    b = save_scenario(synthesize_scenario(12, 24, 3), tmp_path / "b" / "s.yaml")
    assert a.read_bytes() == b.read_bytes()
    assert (a.parent / "s.csv").read_bytes() == (b.parent / "s.csv").read_bytes()


def test_synth_minimums():
    with pytest.raises(ValueError):
        synthesize_scenario(4, 24)
    with pytest.raises(ValueError):
        synthesize_scenario(10, 23)


@given(st.integers(5, 200))
def test_agent_split_sums(n):
    g, p = agent_split(n)
    assert g + p == n and g >= 1 and p >= 1


@settings(max_examples=15)
@given(st.integers(5, 40), st.sampled_from([24, 48]), st.integers(0, 10_000))
def test_synth_validates_and_round_trips(tmp_path_factory, n, T, seed):
    s = synthesize_scenario(n, T, seed)
    assert validate_scenario(s).ok
    path = save_scenario(s, tmp_path_factory.mktemp("rt") / "s.yaml")
    assert load_scenario(path) == s


def test_round_trip_all_asset_kinds(tmp_path):
    fmin = np.minimum(np.arange(1, T + 1) * 1.0, 10.0) * 0.0
    fmax = np.minimum(np.arange(1, T + 1) * 2.0, 10.0)
    dem = DemandSpec(Carrier.ELECTRICITY, series(1.0, T), series(fmin), series(fmax), 10.0)
    bat = battery_prosumer(T, e0=3.0)
    from flexsched.scenario import ProsumerSpec
    p = ProsumerSpec("flex", bat.converters, bat.storages, (dem,), None)
    s = with_prosumers([p], T)
    assert validate_scenario(s).ok
    assert load_scenario(save_scenario(s, tmp_path / "s.yaml")) == s


def test_series_is_read_only():
    a = series([1.0, 2.0])
    with pytest.raises(ValueError):
        a[0] = 3.0
    with pytest.raises(ScenarioError):
        series(1.0)


def test_storage_default_initial_energy():
    st_ = StorageSpec("b", Carrier.HEAT, 1.0, 2.0, 10.0, 1.0, 1.0)
    assert st_.e0 == 6.0
