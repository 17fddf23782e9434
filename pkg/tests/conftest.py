from __future__ import annotations

import sys

import numpy as np
import pytest

from fbm_schemes.calculus import SdeModel, logistic, sin_offset, zero


@pytest.fixture
def sin_logistic() -> SdeModel:
    return SdeModel(sin_offset(2.0), logistic(), 1.0, "sin+2/logistic")


@pytest.fixture
def sin_driftless() -> SdeModel:
    return SdeModel(sin_offset(2.0), zero(), 1.0, "sin+2/0")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion that ran."""
    lines = []
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines = getattr(mod, "ACCEPTANCE_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
