import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = []


def record_criterion(number: int, passed: bool, detail: str):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    _CRITERIA.append(line)
    print(line)
    return line


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bridge():
    from modalfft.synthesis import preset
    sc = preset("bridge18m")
    return sc, sc.simulate(0)


@pytest.fixture(scope="session")
def bridge_fits(bridge):
    """Identified parameters of every bridge band at seed 0."""
    from modalfft.estimator import identify_band
    from modalfft.initializer import init_theta
    from modalfft.spectral import band_spectra
    sc, records = bridge
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for band in sc.bands:
            spectra = band_spectra(records, sc.plan, band)
            theta, trace = identify_band(spectra, init_theta(spectra, sc.plan).theta)
            out.append((band, spectra, theta, trace))
    return out
