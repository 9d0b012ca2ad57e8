from .model import (
    DEFAULT_CEILING_PRICE,
    LOCAL_CARRIERS,
    Carrier,
    ConverterSpec,
    DemandSpec,
    GeneratorSpec,
    ProsumerSpec,
    Scenario,
    ScenarioError,
    StorageSpec,
    ValidationReport,
    Violation,
    series,
    validate_scenario,
)
from .io import load_scenario, save_scenario, scenario_digest
from .synth import agent_split, synthesize_scenario
