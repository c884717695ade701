import pytest

from plcmac.config import builtin_config


@pytest.fixture(scope="session")
def ca1():
    return builtin_config("ca1")


@pytest.fixture(scope="session")
def ca3():
    return builtin_config("ca2ca3")


@pytest.fixture(scope="session")
def counterexample():
    return builtin_config("counterexample")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
