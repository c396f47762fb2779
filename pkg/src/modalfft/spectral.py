"""Scaled FFTs, band selection, singular-value spectra and FRF estimates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import BandTooNarrowError, IdentifiabilityError, ValidationError
from .model import BandSpectra, FrequencyBand, SetupRecord, SetupSpectra, TestPlan


def scaled_fft(samples, dt: float) -> np.ndarray:
    """Two-sided scaled FFT ``sqrt(dt/N) * sum_n x_n exp(-2j pi n k / N)``.

    ``samples`` is ``N`` or ``N x channels``; every bin ``k = 0..N-1`` is
    returned so that ``sum_k |X_k|^2 == dt * sum_n |x_n|^2``.
    """
    x = np.asarray(samples)
    if x.size == 0 or x.shape[0] < 2:
        raise ValidationError("scaled_fft needs at least two samples")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    return np.fft.fft(x, axis=0) * np.sqrt(dt / x.shape[0])


def fft_freqs(n_samples: int, dt: float) -> np.ndarray:
    return np.arange(n_samples) / (n_samples * dt)


def band_bins(band: FrequencyBand, record: SetupRecord):
    """Bin indices ``k`` with ``f_lo < k/(N dt) < f_hi`` and their frequencies."""
    return _band_bins(band, record.n_samples, record.dt)


def _band_bins(band: FrequencyBand, n: int, dt: float):
    band.check_nyquist(0.5 / dt)
    df = 1.0 / (n * dt)
    # one spare bin each side; the strict comparison below decides ties
    k0 = max(int(np.floor(band.f_lo / df)), 0)
    k1 = int(np.ceil(band.f_hi / df))
    bins = np.arange(k0, k1 + 1)
    freqs = bins / (n * dt)
    keep = (freqs > band.f_lo) & (freqs < band.f_hi)
    bins, freqs = bins[keep], freqs[keep]
    if bins.size == 0:
        raise BandTooNarrowError(
            f"band [{band.f_lo}, {band.f_hi}] Hz contains no FFT bin (resolution {df:.6g} Hz)")
    return bins, freqs


def band_spectra(records: Sequence[SetupRecord], plan: TestPlan, band: FrequencyBand,
                 ffts: Optional[Sequence] = None) -> BandSpectra:
    """Cut every setup's scaled FFT down to the band.

    ``ffts`` may carry precomputed ``(input_fft, output_fft)`` pairs so that
    several bands reuse one transform per setup.
    """
    if len(records) != plan.n_setups:
        raise ValidationError(f"{len(records)} records for {plan.n_setups} setups")
    setups = []
    for r, rec in enumerate(records):
        if rec.output.shape[1] != plan.n_channels(r):
            raise ValidationError(
                f"setup {r}: {rec.output.shape[1]} output channels, plan lists {plan.n_channels(r)}")
        if rec.input.shape[1] != plan.n_inputs:
            raise ValidationError(
                f"setup {r}: {rec.input.shape[1]} input channels, plan lists {plan.n_inputs}")
        bins, freqs = band_bins(band, rec)
        if ffts is None:
            U, Y = scaled_fft(rec.input, rec.dt), scaled_fft(rec.output, rec.dt)
        else:
            U, Y = ffts[r]
        setups.append(SetupSpectra(
            setup_index=r, scheme=plan.shaker_scheme_of_setup[r],
            sensor_dofs=plan.sensor_selection[r], bins=bins, freqs=freqs,
            Y=Y[bins], U=U[bins], q=rec.q))
    return BandSpectra(band=band, setups=tuple(setups), n_dofs=plan.n_dofs,
                       n_inputs=plan.n_inputs, n_schemes=plan.n_shaker_schemes)


# ---------------------------------------------------------------------------
# Singular-value spectrum
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SvSpectrum:
    freqs: np.ndarray
    singular_values: np.ndarray   # (n_freqs, channels), descending per row


def _window_sum(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving sum along axis 0, truncated at the edges."""
    half = window // 2
    c = np.cumsum(np.concatenate([np.zeros((1,) + x.shape[1:], x.dtype), x]), axis=0)
    n = x.shape[0]
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + (window - half), 0, n)
    return c[hi] - c[lo], (hi - lo)


def sv_spectrum(outputs, freqs, averaging_window: int = 5) -> SvSpectrum:
    """Singular values of the window-averaged sample PSD matrix at each bin.

    ``outputs`` holds scaled-FFT ordinates (``n_freqs x channels``).  The
    PSD matrix at bin ``k`` is the mean of ``Y_j Y_j^H`` over the
    ``averaging_window`` bins centred on ``k``.
    """
    if averaging_window < 1:
        raise ValidationError("averaging window must be at least one bin")
    Y = np.asarray(outputs, dtype=complex)
    if Y.ndim == 1:
        Y = Y[:, None]
    outer = Y[:, :, None] * Y[:, None, :].conj()
    s, cnt = _window_sum(outer, averaging_window)
    psd = s / cnt[:, None, None]
    sv = np.linalg.eigvalsh(psd)[:, ::-1]
    return SvSpectrum(np.asarray(freqs, dtype=float), np.clip(sv, 0.0, None))


def smoothed_psd(x, averaging_window: int = 5) -> np.ndarray:
    """Per-channel smoothed periodogram ``mean |X|^2`` over the window."""
    X = np.asarray(x)
    if X.ndim == 1:
        X = X[:, None]
    s, cnt = _window_sum(np.abs(X) ** 2, averaging_window)
    return s / cnt[:, None]


# ---------------------------------------------------------------------------
# FRF estimate
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FrfEstimate:
    setup_index: int
    freqs: np.ndarray
    H: np.ndarray          # (n_freqs, d_r, d_s)
    H_band: np.ndarray     # (d_r, d_s)


def frf_estimate(ss: SetupSpectra, window: int = 3) -> FrfEstimate:
    """H1 estimate ``(sum Y U^H)(sum U U^H)^-1`` over a local window of bins."""
    Y, U = ss.Y, ss.U
    Guu_band = U.T @ U.conj()
    if np.linalg.matrix_rank(Guu_band) < U.shape[1]:
        raise IdentifiabilityError(
            f"setup {ss.setup_index}: input cross-spectral matrix is singular in the band")
    Gyu_band = Y.T @ U.conj()
    H_band = np.linalg.solve(Guu_band.T, Gyu_band.T).T

    gyu, _ = _window_sum(Y[:, :, None] * U[:, None, :].conj(), window)
    guu, _ = _window_sum(U[:, :, None] * U[:, None, :].conj(), window)
    H = np.empty_like(gyu)
    for k in range(len(Y)):
        # X Guu = Gyu  ->  Guu^T X^T = Gyu^T
        H[k] = np.linalg.lstsq(guu[k].T, gyu[k].T, rcond=None)[0].T
    return FrfEstimate(ss.setup_index, ss.freqs, H, H_band)
