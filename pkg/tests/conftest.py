import contextlib
import time

import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request, capsys):
    """Context manager recording one acceptance criterion as PASS or FAIL.

    It yields a list; strings appended to it are reported under the line.
    """
    results = request.config.stash[_RESULTS]

    @contextlib.contextmanager
    def record(number, title):
        t0 = time.perf_counter()
        status = "FAIL"
        notes = []
        try:
            yield notes
            status = "PASS"
        finally:
            line = f"criterion {number:>2}: {status}  {title}  ({time.perf_counter() - t0:.1f}s)"
            if notes:
                line += "\n    " + "; ".join(notes)
            results[number] = line
            with capsys.disabled():
                print(f"\n{line}")

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
