import warnings

import numpy as np
import pytest

from hoemu.design import extend_design, training_design
from hoemu.forward import forward_batch


@pytest.fixture(scope="session")
def small_train():
    """300-point Sobol training set on the analytic model."""
    return forward_batch(training_design(300))


@pytest.fixture(scope="session")
def small_test():
    return forward_batch(extend_design(300, 5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


# criterion number -> (status, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
