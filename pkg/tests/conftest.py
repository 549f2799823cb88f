from pathlib import Path

import pytest

from artifact.circuit_ir import parse_netlist
from artifact.sim_driver import default_engine

FIXTURES = Path(__file__).parent / "fixtures"
NETLISTS = FIXTURES / "netlists"


def netlist_text(name: str) -> str:
    return (NETLISTS / f"{name}.cir").read_text()


def load_netlist(name: str):
    return parse_netlist(netlist_text(name))


@pytest.fixture(scope="session")
def engine():
    return default_engine()


@pytest.fixture
def cs_amp():
    return load_netlist("amp_good")


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
