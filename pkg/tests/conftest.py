import warnings

import pytest

# a coarse, cheap variant of the desk scene for smoke tests of the harness
SMALL = [
    "grid.resolution=0.02",
    "filter.M=300",
    "cloud.size=20",
    "cloud.truth_size=60",
    "action.candidates=150",
    "max_iterations=3",
    "seeds=[0, 1]",
]


@pytest.fixture(autouse=True)
def _quiet_numba():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.REPORT:
            terminalreporter.write_line(line)
