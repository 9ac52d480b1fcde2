import pytest

# criterion number -> (description, list of outcomes)
_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when != "call" and not (rep.failed or rep.skipped):
        return
    n, text = marker.args
    status = "skip" if rep.skipped else ("pass" if rep.passed else "fail")
    _CRITERIA.setdefault(n, (text, []))[1].append(status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        text, outcomes = _CRITERIA[n]
        if "fail" in outcomes:
            verdict = "FAIL"
        elif "pass" in outcomes:
            skipped = outcomes.count("skip")
            verdict = "PASS" if not skipped else f"PARTIAL ({skipped} check skipped)"
        else:
            verdict = "SKIP"
        terminalreporter.write_line(f"criterion {n:2d} {verdict} - {text}")
