"""Estimator-style front end for a single frequency band.

    >>> est = BayesianModalIdentifier(plan=plan, band=(1.05, 1.40, 1))
    >>> est.fit(records)
    >>> est.frequencies_, est.damping_ratios_, est.pcm_
"""
from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .estimator import DescentOptions, identify_band
from .exceptions import ValidationError
from .initializer import init_theta
from .model import BandSpectra, band_frf, nllf, setup_prediction
from .spectral import band_spectra
from .uncertainty import hessian, nullspace_basis, posterior_covariance, summarize
from .validation import check_band, check_plan, check_records


class BayesianModalIdentifier(BaseEstimator):
    """MAP modal parameters and their posterior covariance for one band.

    Parameters
    ----------
    plan : TestPlan
        Sensor/shaker layout the records follow.
    band : FrequencyBand or (f_lo, f_hi, n_modes)
        Band to identify.
    tol, max_iter : float, int
        Coordinate-descent stopping rule.
    sv_window, frf_window : int
        Smoothing windows (bins) for peak picking and FRF estimates.
    compute_uncertainty : bool
        Build the Hessian and posterior covariance after the fit.
    """

    def __init__(self, plan=None, band=None, tol: float = 1e-6, max_iter: int = 100,
                 sv_window: int = 5, frf_window: int = 3, compute_uncertainty: bool = True):
        self.plan = plan
        self.band = band
        self.tol = tol
        self.max_iter = max_iter
        self.sv_window = sv_window
        self.frf_window = frf_window
        self.compute_uncertainty = compute_uncertainty

    def _spectra(self, X) -> BandSpectra:
        plan = check_plan(self.plan)
        return band_spectra(check_records(X, plan), plan, check_band(self.band))

    def fit(self, X, y=None):
        """``X`` is a sequence of :class:`SetupRecord`, one per setup of ``plan``."""
        if y is not None:
            raise ValidationError("modal identification is unsupervised; y must be None")
        spectra = self._spectra(X)
        guess = init_theta(spectra, self.plan, self.sv_window, self.frf_window)
        theta, trace = identify_band(spectra, guess.theta, DescentOptions(self.tol, self.max_iter))
        self.initial_theta_ = guess.theta
        self.theta_ = theta
        self.trace_ = trace
        self.frequencies_ = theta.freqs
        self.damping_ratios_ = theta.dampings
        self.mode_shapes_ = theta.mode_shapes
        self.mpf_ = theta.mpf
        self.error_psd_ = theta.err_psd
        self.converged_ = trace.converged
        self.n_iter_ = trace.n_iter
        self.nllf_ = nllf(theta, spectra)
        self.pcm_ = None
        self.result_ = None
        if self.compute_uncertainty:
            pcm = posterior_covariance(hessian(theta, spectra), nullspace_basis(theta))
            self.result_ = summarize(theta, pcm, self.nllf_, trace)
            self.pcm_ = pcm
        return self

    def predict(self, X) -> list:
        """Predicted in-band output FFTs (``N_f x d_r`` per setup) for the records' inputs."""
        check_is_fitted(self, "theta_")
        spectra = self._spectra(X)
        return [setup_prediction(self.theta_, ss) for ss in spectra.setups]

    def modal_frf(self, X) -> list:
        """Modal FRFs of the fitted modes at each setup's in-band bins."""
        check_is_fitted(self, "theta_")
        return [band_frf(self.theta_, ss) for ss in self._spectra(X).setups]

    def score(self, X, y=None) -> float:
        """Negative NLLF of ``X`` under the fitted parameters (higher is better)."""
        check_is_fitted(self, "theta_")
        return -nllf(self.theta_, self._spectra(X))
