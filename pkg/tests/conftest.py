from functools import lru_cache

import pytest

from pvmppt.neural import train_estimators
from pvmppt.pv_model import default_panel
from pvmppt.sim import ScenarioProfile, SimConfig, run_comparison

KINDS = ("cpoa", "ampo", "ampo_ann")


@lru_cache(maxsize=1)
def trained():
    """(nets, reports, dataset) for the default panel and seed, shared by all tests."""
    return train_estimators(default_panel(), seed=42)


@lru_cache(maxsize=None)
def comparison(preset: str):
    return run_comparison(ScenarioProfile.preset(preset), KINDS, SimConfig(), trained()[0])


@pytest.fixture(scope="session")
def panel():
    return default_panel()


@pytest.fixture(scope="session")
def nets():
    return trained()[0]


@pytest.fixture(scope="session")
def reports():
    return trained()[1]


@pytest.fixture(scope="session")
def dataset():
    return trained()[2]


@pytest.fixture(scope="session")
def stc_comparison():
    return comparison("stc")


@pytest.fixture(scope="session")
def step_comparison():
    return comparison("step_irradiance")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
