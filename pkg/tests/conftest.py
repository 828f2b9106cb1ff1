import json
from pathlib import Path

import pytest

from stlenforce.dsl import parse_spec
from stlenforce.trace import PlannedTrajectory, PredictedEnvironment, Trace

FIXTURES = Path(__file__).parent / "fixtures"


def load_json(name: str):
    return json.loads((FIXTURES / name).read_text())


@pytest.fixture(scope="session")
def rules_text() -> str:
    return (FIXTURES / "traffic_rules.stl").read_text()


@pytest.fixture(scope="session")
def rules_spec(rules_text):
    return parse_spec(rules_text)


@pytest.fixture()
def junction_trace() -> Trace:
    return Trace.from_json(load_json("junction_approach_trace.json"))


@pytest.fixture()
def highway_trace() -> Trace:
    return Trace.from_json(load_json("highway_speed_trace.json"))


@pytest.fixture()
def junction_plan() -> PlannedTrajectory:
    return PlannedTrajectory.from_json(load_json("junction_approach_plan.json"))


@pytest.fixture()
def junction_env() -> PredictedEnvironment:
    return PredictedEnvironment.from_json(load_json("junction_approach_env.json"))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion at the end of the run."""
    tr = terminalreporter
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in tr.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion" in nodeid:
                lines.append((nodeid.split("::")[-1], outcome.upper()))
    if lines:
        tr.write_sep("-", "acceptance criteria")
        for name, outcome in sorted(set(lines)):
            tr.write_line(f"{outcome:<6} {name}")
