from collections import defaultdict

import pytest

from metarl.learnedalgos import init_lpo_near_ppo

_CRITERIA: dict[int, str] = {}
_OUTCOMES: dict[int, list[bool]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA[m.args[0]] = m.args[1]


def pytest_runtest_makereport(item, call):
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        _OUTCOMES[m.args[0]].append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _OUTCOMES.get(n)
        status = "NOT RUN" if not results else ("PASS" if all(results) else "FAIL")
        terminalreporter.write_line(f"criterion {n:2d} {status:7s} {_CRITERIA[n]}")


@pytest.fixture(scope="session")
def lpo_near_ppo():
    return init_lpo_near_ppo(0)
