import sys
from pathlib import Path

import numpy as np
from hypothesis import HealthCheck, settings

from wovenseg.io import ClassLabel, LabelFrame

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

WEFT, WARP = ClassLabel.WEFT, ClassLabel.WARP


def frames_of(*grids):
    return [LabelFrame(np.asarray(g, dtype=np.uint16), i) for i, g in enumerate(grids)]


def box(shape, r0, r1, c0, c1, value=1, grid=None):
    g = np.zeros(shape, dtype=np.uint16) if grid is None else grid
    g[r0:r1, c0:c1] = value
    return g


# --- acceptance summary -------------------------------------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        detail = dict(report.user_properties).get("detail", "")
        name = report.nodeid.split("::")[-1]
        prev = _criteria.get(name)
        if prev is None or prev[0] == "PASS":
            _criteria[name] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        status, detail = _criteria[name]
        terminalreporter.write_line(f"{status}  {name}  {detail}")
