from pathlib import Path

import pytest

from mcreact.configfile import load_experiment

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def small_cfg_path():
    return DATA / "small.cfg"


@pytest.fixture(scope="session")
def small_experiment(small_cfg_path):
    return load_experiment(small_cfg_path)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
