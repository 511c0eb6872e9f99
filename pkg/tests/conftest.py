"""Shared pytest hooks: acceptance-criterion result lines.

Tests marked @pytest.mark.criterion(n, "title") report one PASS/FAIL line
each at the end of the session, so the acceptance gate reads as a checklist.
"""

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(n, title): acceptance criterion number and title"
    )


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    num = marker.args[0]
    title = marker.args[1] if len(marker.args) > 1 else item.name
    outcome = "PASS" if call.excinfo is None else "FAIL"
    _RESULTS[num] = (outcome, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        outcome, title = _RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d} {outcome}: {title}")
