import json
import os

import numpy as np
import pytest

FROZEN_PATH = os.path.join(os.path.dirname(__file__), "oracles", "frozen.json")


@pytest.fixture(scope="session")
def frozen():
    with open(FROZEN_PATH) as fh:
        return json.load(fh)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed as one block at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
