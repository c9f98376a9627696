"""Suite-wide hooks: acceptance tests run last, wall clock is tracked."""

import time

SUITE_START = time.perf_counter()


def suite_elapsed() -> float:
    return time.perf_counter() - SUITE_START


def pytest_collection_modifyitems(items):
    """Run the acceptance module after everything else.

    Its final criterion checks the whole suite's wall clock, so it must
    close the session.
    """
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import CRITERION_LINES
    except ImportError:
        return
    if CRITERION_LINES:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in CRITERION_LINES:
            terminalreporter.write_line("  " + line)
