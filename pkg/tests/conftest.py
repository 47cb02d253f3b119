from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parents[1] / "src" / "ctikg" / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def demo_dir() -> Path:
    return DATA / "demo"


@pytest.fixture
def adwind_dir() -> Path:
    return DATA / "adwind"


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
