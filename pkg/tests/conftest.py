import logging
import time

import numpy as np
import pytest

from synchemu.files import bundled_network, bundled_scenario, parse_network, read_network, read_scenario
from synchemu.simulation import prepare, run, scenario_from_file

logging.getLogger("synchemu").setLevel(logging.ERROR)

SMIB_TEXT = """
[system]
base_mva = 100
frequency = 60

[buses]
id kind  v_set p_gen
1  PV    1.05  {p}
2  slack 1.00  0

[branches]
from to r x b
1    2  0 {x_line} 0

[devices]
{device}
infinite_bus name=GRID bus=2
"""


def smib(device, p=0.8, x_line=0.3):
    """Single machine on an infinite bus: machine at bus 1, source at bus 2."""
    return parse_network(SMIB_TEXT.format(p=p, x_line=x_line, device=device))


@pytest.fixture(scope="session")
def wscc():
    return read_network(bundled_network())


@pytest.fixture(scope="session")
def wscc_prepared(wscc):
    return prepare(wscc)


@pytest.fixture(scope="session")
def fault_run(wscc, wscc_prepared):
    """The bundled fault scenario, run once per session."""
    scn = read_scenario(bundled_scenario())
    scenario = scenario_from_file(scn, wscc)
    dae, z0, _ = wscc_prepared
    t0 = time.perf_counter()
    result = run(scenario, prepared=(dae, z0))
    elapsed = time.perf_counter() - t0
    return result, result.channels(), elapsed, scenario


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


# --------------------------------------------------------------------------- acceptance summary

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        why = []
        if report.failed:
            crash = getattr(report.longrepr, "reprcrash", None)
            why = [crash.message.splitlines()[0]] if crash else report.longreprtext.splitlines()[-1:]
        _criteria[number] = (title, report.passed, why)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed, why = _criteria[number]
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}"
        if why:
            line += f"  ({why[0].strip()[:120]})"
        terminalreporter.write_line(line)
