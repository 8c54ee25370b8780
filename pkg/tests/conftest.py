import numpy as np
import pytest

# acceptance criteria register their outcome here; the terminal summary
# prints one line per criterion
ACCEPTANCE_RESULTS = {}


def record_criterion(number, name, passed, detail=""):
    ACCEPTANCE_RESULTS[number] = (name, bool(passed), detail)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        name, ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {name}  {detail}")
