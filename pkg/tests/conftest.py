import functools

import numpy as np
import pytest

from ghz.pipeline import preset_config, run_convergence_study

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def preset_report(name):
    """One full study per preset, shared by every test module."""
    return run_convergence_study(preset_config(name))


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
