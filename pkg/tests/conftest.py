import pytest

_ACCEPTANCE = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.detail = ""
        self.ok = False
        self.error = ""

    def line(self):
        text = f"criterion {self.number:>2}  {self.title}"
        if self.detail:
            text += f": {self.detail}"
        if self.error:
            text += f" [{self.error}]"
        return f"{'PASS' if self.ok else 'FAIL'}  {text}"


@pytest.fixture
def criterion(request):
    """Register an acceptance criterion for the end-of-run summary.

    ``c = criterion(7, "title")`` at the top of the test; set ``c.detail``
    to the measured values. Pass/fail comes from the test outcome.
    """
    def declare(number, title):
        c = _ACCEPTANCE[request.node.nodeid] = _Criterion(number, title)
        return c
    return declare


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    c = _ACCEPTANCE.get(item.nodeid)
    if c is not None and rep.when == "call":
        c.ok = rep.passed
        if rep.failed and call.excinfo is not None:
            c.error = (str(call.excinfo.value).strip().splitlines() or [call.excinfo.typename])[0]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(_ACCEPTANCE.values(), key=lambda c: c.number):
        terminalreporter.write_line(c.line())
