import numpy as np
import pytest

from reldiff.field import make_spectrum

# criterion number -> {"title", "passed", "details"}, filled by the report hook below
ACCEPTANCE: dict[int, dict] = {}


@pytest.fixture(scope="session")
def reference():
    return make_spectrum("reference")


@pytest.fixture(scope="session")
def kubo_ir():
    return make_spectrum("kubo-ir")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    entry = ACCEPTANCE.setdefault(number, {"title": title, "passed": True, "details": []})
    entry["passed"] = entry["passed"] and rep.passed
    if rep.when == "call":
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        e = ACCEPTANCE[number]
        line = f"{'PASS' if e['passed'] else 'FAIL'} {number:2d}. {e['title']}"
        if e["details"]:
            line += " | " + "; ".join(e["details"])
        terminalreporter.write_line(line)
