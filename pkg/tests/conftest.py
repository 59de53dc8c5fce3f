import pytest

from anoncloud.scenario import ScenarioConfig, load_config, run_scenario

SCENARIO_DIR = "scenarios"


def canonical_dict(**overrides) -> dict:
    data = {
        "name": "canonical-test",
        "seed": 42,
        "payment_mode": "postpaid",
        "circuit_length": 3,
        "slave_nodes": 4,
        "customers": ["alpha", "bravo"],
        "catalog": [
            {"service": 1, "kind": "sum", "unit_price": 7},
            {"service": 2, "kind": "concat", "unit_price": 5},
            {"service": 3, "kind": "max", "unit_price": 4},
        ],
        "events": [
            {"kind": "request", "customer": "alpha", "service": 1,
             "job": "sum[3,1,4,1,5,9,2,6]"},
            {"kind": "rotate"},
            {"kind": "request", "customer": "bravo", "service": 2,
             "job": "concat[ab,cd,ef]"},
            {"kind": "request", "customer": "alpha", "service": 3,
             "job": "max[10,5,20]"},
        ],
    }
    data.update(overrides)
    return data


def make_config(**overrides) -> ScenarioConfig:
    return ScenarioConfig.from_dict(canonical_dict(**overrides), source="<test>")


@pytest.fixture(scope="session")
def canonical_run():
    """One canonical postpaid run shared by read-only analysis tests."""
    return run_scenario(make_config())


@pytest.fixture(scope="session")
def prepaid_run():
    config = load_config(f"{SCENARIO_DIR}/canonical_prepaid.yaml")
    return run_scenario(config)
