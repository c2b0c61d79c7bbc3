import logging

import pytest

from iovfl import sim as S

_REPORT: list[str] = []


@pytest.fixture(scope="session")
def lis_runs():
    """Ten 30-round runs of the default non-i.i.d experiment with the LIS scheduler, keyed by seed."""
    logging.getLogger("iovfl").setLevel(logging.ERROR)
    return {seed: S.run_experiment(S.SimConfig(seed=seed, rounds=30, convergence_tol=0), "lis")
            for seed in range(10)}


@pytest.fixture
def report():
    """Record one summary line; all lines are repeated at the end of the session."""
    def add(line: str) -> None:
        print(line)
        _REPORT.append(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance summary")
        for line in _REPORT:
            terminalreporter.write_line(line)
