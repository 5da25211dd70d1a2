import json
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from attreach import cli, io

CONFIG_PATH = Path(__file__).resolve().parents[1] / "configs" / "damped_attitude.json"

_criteria: dict[int, list[tuple[str, str]]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test backs acceptance criterion n")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    item_marks = getattr(report, "criteria", None)
    if not item_marks:
        return
    for n in item_marks:
        _criteria[n].append((report.nodeid, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.criteria = [m.args[0] for m in item.iter_markers("criterion")]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        ok = all(o == "passed" for _, o in results)
        failing = [nid.split("::")[-1] for nid, o in results if o != "passed"]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({len(results)} test(s))"
        if failing:
            line += " failing: " + ", ".join(failing)
        tr.write_line(line)


@pytest.fixture(scope="session")
def damped_raw() -> dict:
    return json.loads(CONFIG_PATH.read_text())


@pytest.fixture(scope="session")
def damped_settings(damped_raw) -> io.RunSettings:
    return io.parse_config(damped_raw)


@pytest.fixture(scope="session")
def damped_run(tmp_path_factory):
    """The example config through ``attreach run``: (exit code, seconds, results dir)."""
    out = tmp_path_factory.mktemp("damped_run")
    t0 = time.perf_counter()
    code = cli.main(["run", "--config", str(CONFIG_PATH), "--out", str(out)])
    return code, time.perf_counter() - t0, out


@pytest.fixture(scope="session")
def damped_result(damped_run):
    _, _, out = damped_run
    _, settings, result = io.load_results(out)
    return settings, result


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
