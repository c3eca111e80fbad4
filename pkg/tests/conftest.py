"""Shared fixtures."""

import sys

import numpy as np
import pytest

from pianogan.pianoroll import DESK_RESOLUTION


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk():
    return DESK_RESOLUTION


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[number])
