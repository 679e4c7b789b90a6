"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, title)`` registers the running test as acceptance criterion ``n``."""

    def register(number, title):
        ACCEPTANCE[request.node.nodeid] = (number, title, [])
        return ACCEPTANCE[request.node.nodeid][2]

    return register


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.nodeid in ACCEPTANCE and rep.when == "call":
        number, title, notes = ACCEPTANCE[item.nodeid]
        ACCEPTANCE[item.nodeid] = (number, title, notes, rep.passed)


def pytest_terminal_summary(terminalreporter):
    done = [v for v in ACCEPTANCE.values() if len(v) == 4]
    if not done:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, notes, passed in sorted(done):
        detail = ("  [" + "; ".join(notes) + "]") if notes else ""
        terminalreporter.write_line("%s  %2d. %s%s" % ("PASS" if passed else "FAIL", number, title, detail))
