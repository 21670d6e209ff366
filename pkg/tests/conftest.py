import sys
from pathlib import Path

import pytest

# test helpers (oracles) live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def detail(request):
    """Free-text measurements an acceptance test wants reported next to its verdict."""
    notes: list[str] = []
    request.node._criterion_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    verdict = "PASS" if rep.passed else "FAIL"
    _criteria[mark.args[0]] = (verdict, "; ".join(getattr(item, "_criterion_notes", [])))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        verdict, notes = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}" + (f"  ({notes})" if notes else ""))
