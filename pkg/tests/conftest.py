import os
import sys

import numpy as np
import pytest

HERE = os.path.dirname(__file__)
ROOT = os.path.dirname(HERE)
sys.path.insert(0, HERE)

# acceptance verdicts (criterion number, line) collected during the session, printed in the terminal summary
VERDICTS: list = []


def record(number: int, name: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(VERDICTS):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def configs_dir():
    return os.path.join(ROOT, "configs")
