import numpy as np
import pytest

from pqsim.config import ExperimentConfig
from pqsim.metrics import PlanarMoments

# Experimental reference conditional and read-out covariances (spins^2) and coherences.
GAMMA_REF = np.array([[2.32e5, 0.64e5], [0.64e5, 3.00e5]])
GAMMA0_REF = np.array([[1.02e5, 0.14e5], [0.14e5, 1.03e5]])
F_PAR_REF = 1.45e6
N_ATOMS_REF = 1.75e6
N_TILDE_REF = (0.89 + 0.55 * 0.11) * N_ATOMS_REF

ACCEPTANCE_LINES = []


@pytest.fixture
def ref_moments():
    return PlanarMoments(F_PAR_REF, 0.0, *GAMMA_REF[[0, 1, 0], [0, 1, 1]], N_ATOMS_REF, N_TILDE_REF)


@pytest.fixture
def nominal_cfg():
    return ExperimentConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
