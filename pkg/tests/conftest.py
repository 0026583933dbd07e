import os
import sys

from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# acceptance criterion number -> list of (test id, passed)
_CRITERIA: dict[int, list[tuple[str, bool]]] = {}
_TITLES: dict[int, str] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    _TITLES[n] = title
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        _CRITERIA.setdefault(n, []).append((item.name, call.excinfo is None))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok = all(p for _, p in _CRITERIA[n])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {_TITLES[n]}")
