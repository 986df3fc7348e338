from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture
def pgn_dir() -> Path:
    return DATA


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute learning runs")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
