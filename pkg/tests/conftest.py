import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flexsched.scenario import (
    Carrier,
    ConverterSpec,
    DemandSpec,
    GeneratorSpec,
    ProsumerSpec,
    Scenario,
    StorageSpec,
    series,
)

settings.register_profile(
    "default", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile("default")

E, Q, H = Carrier.ELECTRICITY, Carrier.HEAT, Carrier.HYDROGEN


def two_generators(T):
    return (
        GeneratorSpec("g1", 0.01, 10.0, series(0.0, T), series(100.0, T)),
        GeneratorSpec("g2", 0.02, 20.0, series(0.0, T), series(100.0, T)),
    )


def consumer(pid, demand, T):
    return ProsumerSpec(pid, (), (), (DemandSpec(E, series(demand, T)),), None)


def micro_scenario(T=24, demand=60.0):
    """Two quadratic generators serving a flat inflexible load."""
    return Scenario(T, two_generators(T), (consumer("load", demand, T),), {})


def heat_prosumer(T, heat=10.0, hp_cap=10.0, boiler_cap=20.0):
    convs = (
        ConverterSpec("hp", E, Q, hp_cap, efficiency_nonelectric=3.0),
        ConverterSpec("boiler", Carrier.METHANE, Q, boiler_cap, efficiency_nonelectric=0.9),
    )
    return ProsumerSpec("house", convs, (), (DemandSpec(Q, series(heat, T)),), None)


def battery_prosumer(T, power=4.0, e_max=20.0, e0=0.0, eff=1.0, pid="bat"):
    st = StorageSpec("b", E, power, 0.0, e_max, eff, eff, initial_energy=e0)
    return ProsumerSpec(pid, (), (st,), (), None)


def with_prosumers(prosumers, T, gens=None, methane=30.0):
    return Scenario(T, gens or two_generators(T), tuple(prosumers), {Carrier.METHANE: series(methane, T)})


@pytest.fixture
def micro():
    return micro_scenario()


# -- acceptance summary -------------------------------------------------------

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Record one pass/fail line for an acceptance criterion; printed at the end of the run."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
