import pytest

from platoonsim.config import SimConfig
from platoonsim.scenario import HV, ICV, ScenarioInstance, VehicleSpec, VehicleState


@pytest.fixture(scope="session")
def cfg():
    return SimConfig()


def make_scenario(rows, mpr=0.0, seed=0):
    """rows: (kind, mass, length, dec_max, x, v[, alpha, reaction])"""
    specs, states = [], []
    icv = set()
    for k, row in enumerate(rows, start=1):
        kind, mass, length, dec, x, v, *rest = row
        alpha, react = rest if rest else (0.85, 1.1)
        specs.append(VehicleSpec(k, kind, mass, length, dec, alpha, react))
        states.append(VehicleState(x, v, 0.0))
        if kind == ICV:
            icv.add(k)
    return ScenarioInstance(tuple(specs), tuple(states), mpr, frozenset(icv), seed)



# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
