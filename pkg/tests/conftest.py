import numpy as np
import pytest

from settlement_ccf.raster import make_raster

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one acceptance line: ``acceptance(name, passed, detail)``."""

    def record(name, passed, detail=""):
        _ACCEPTANCE.append((name, None if passed is None else bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_raster(rng):
    stack = rng.uniform(0.0, 0.4, size=(3, 4, 5)).astype(np.float32)
    return make_raster(stack, ["4", "3", "2"])
