import numpy as np
import pytest

from imlab import spectral as sp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def direct_eval(u: sp.SpectralField, x: np.ndarray) -> np.ndarray:
    """Brute-force ``sum_m c_m exp(i m.x)`` at points ``x`` of shape (npts, d); no FFT."""
    phase = np.exp(1j * x @ u.basis.modes.T.astype(float))  # (npts, nmodes)
    return phase @ u.coeffs.T if u.kind == "vector" else phase @ u.coeffs


def uniform_points(d: int, M: int) -> np.ndarray:
    g = 2 * np.pi * np.arange(M) / M
    mesh = np.meshgrid(*([g] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
