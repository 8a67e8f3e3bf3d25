import pytest

CRITERIA = range(1, 11)
_results = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_results] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion for the summary."""
    store = request.config.stash[_results]

    def record(number, ok, detail):
        store[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash[_results]
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        ok, detail = store.get(n, (False, "not run or errored before a verdict"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
