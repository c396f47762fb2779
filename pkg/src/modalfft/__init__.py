"""Bayesian FFT modal identification for multi-setup forced-vibration tests."""

__version__ = "0.1.0"

from .estimator import DescentOptions, DescentTrace, identify_band  # noqa: E402
from .exceptions import (AssemblyError, BandTooNarrowError, CloseModesWarning,  # noqa: E402
                         DegenerateFitWarning, DomainError, IdentifiabilityError, ModalIDError,
                         NotAMinimumError, NumericalError, ValidationError)
from .identifier import BayesianModalIdentifier  # noqa: E402
from .initializer import init_theta  # noqa: E402
from .model import (BandSpectra, FrequencyBand, ModalParameterSet, ParameterLayout,  # noqa: E402
                    SetupRecord, TestPlan, frf_value, nllf)
from .spectral import band_spectra, scaled_fft  # noqa: E402
from .synthesis import preset  # noqa: E402
from .uncertainty import PosteriorResult, hessian, posterior_covariance, summarize  # noqa: E402

__all__ = [
    "AssemblyError", "BandSpectra", "BandTooNarrowError", "BayesianModalIdentifier",
    "CloseModesWarning", "DegenerateFitWarning", "DescentOptions", "DescentTrace", "DomainError",
    "FrequencyBand", "IdentifiabilityError", "ModalIDError", "ModalParameterSet",
    "NotAMinimumError", "NumericalError", "ParameterLayout", "PosteriorResult", "SetupRecord",
    "TestPlan", "ValidationError", "band_spectra", "frf_value", "hessian", "identify_band",
    "init_theta", "nllf", "posterior_covariance", "preset", "scaled_fft", "summarize",
]
