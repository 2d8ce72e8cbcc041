import pytest

# criterion number -> [title, outcome, detail]
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.fixture
def measured(request):
    """Store a one-line measurement shown next to the criterion verdict."""
    mark = request.node.get_closest_marker("criterion")
    details = []
    yield details.append
    if mark is not None:
        _ACCEPTANCE.setdefault(mark.args[0], [mark.args[1], "not run", ""])[2] = "; ".join(details)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = _ACCEPTANCE.setdefault(mark.args[0], [mark.args[1], "not run", ""])
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry[1] = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, verdict, detail = _ACCEPTANCE[n]
        line = f"[{verdict}] criterion {n:>2}: {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
