import numpy as np
import pytest

from spprecond.spectral import laplacian_symbol

ACCEPTANCE_LINES = []


def midgap_shift(grid, target, below=False):
    """Midpoint of the spectral gap of ``L`` containing ``target``.

    With ``below`` the gap is the last one lying entirely under ``target``.
    """
    lam = np.unique(np.round(laplacian_symbol(grid).values.ravel(), 6))
    lo = lam[lam < target]
    if below:
        return 0.5 * (lo[-2] + lo[-1])
    return 0.5 * (lo[-1] + lam[lam >= target][0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
