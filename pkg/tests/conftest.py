import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edgesched.plant import ChannelSpec, ProcessSpec, SystemConfig  # noqa: E402


def scalar_config(coeffs=(1.02, 1.2), cap=6, p=0.9, **delays) -> SystemConfig:
    procs = tuple(ProcessSpec(i, np.array([[a]]), np.eye(1), aoi_cap=cap)
                  for i, a in enumerate(coeffs, start=1))
    return SystemConfig(procs, channel=ChannelSpec(p), **delays)


@pytest.fixture
def tiny2():
    """Two scalar processes (A = 1.02, 1.2), caps 6, p = 0.9."""
    return scalar_config()


# -- acceptance summary ----------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, summary): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    n, summary = mark.args
    entry = _CRITERIA.setdefault(n, {"summary": summary, "passed": True})
    if report.failed:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        status = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status}: {entry['summary']}")
