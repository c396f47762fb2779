"""MAP estimation by coordinate descent.

Each outer iteration refreshes the error PSDs, checks the relative NLLF
decrease, then updates the MPFs and mode shapes by their closed-form
least-squares solutions, renormalises the shapes and finally moves the
frequencies and damping ratios with a Nelder-Mead search.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .exceptions import (DegenerateFitWarning, IdentifiabilityError, NumericalError,
                         ValidationError)
from .model import (BandSpectra, ModalParameterSet, ParameterLayout, band_frf,
                    canonicalize, check_compatible, frf_value, nllf, residual_energy)

log = logging.getLogger(__name__)

ERR_PSD_FLOOR = 1e-30


@dataclass(frozen=True)
class DescentOptions:
    tol: float = 1e-6
    max_iter: int = 100
    simplex_ftol: float = 1e-10        # relative spread of simplex NLLF values
    simplex_evals_per_mode: int = 200
    simplex_step_logf: float = 5e-3
    simplex_step_logz: float = 0.2

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")


@dataclass
class DescentTrace:
    """NLLF history; ``nllf[i]`` is the value after outer iteration ``i + 1``."""

    initial_nllf: float = float("nan")
    nllf: list = field(default_factory=list)
    reason: str = ""
    n_iter: int = 0
    flags: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.reason == "converged"


# ---------------------------------------------------------------------------
# Block updates
# ---------------------------------------------------------------------------
def update_se(theta: ModalParameterSet, spectra: BandSpectra, flags=None) -> np.ndarray:
    """Exact minimiser of the NLLF over each setup's error PSD."""
    out = np.empty(spectra.n_setups)
    for ss in spectra.setups:
        se = residual_energy(theta, ss) / (ss.n_channels * ss.n_freqs)
        if not se > ERR_PSD_FLOOR:
            warnings.warn(f"setup {ss.setup_index}: zero residual, error PSD floored",
                          DegenerateFitWarning, stacklevel=2)
            if flags is not None and "err_psd_floor" not in flags:
                flags.append("err_psd_floor")
            se = ERR_PSD_FLOOR
        out[ss.setup_index] = se
    return out


def _spd_solve(A, b, what):
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), b)
    except (np.linalg.LinAlgError, ValueError):
        rank = np.linalg.matrix_rank(A)
        if rank < A.shape[0]:
            raise IdentifiabilityError(
                f"{what}: normal matrix has rank {rank} < {A.shape[0]}") from None
        return np.linalg.lstsq(A, b, rcond=None)[0]


def phi_normal_equations(theta: ModalParameterSet, spectra: BandSpectra):
    """Coefficient matrix and right-hand side of the mode-shape update."""
    d, m = theta.n_dofs, theta.n_modes
    A = np.zeros((d * m, d * m))
    b = np.zeros((d, m))
    for ss in spectra.setups:
        w = 1.0 / theta.err_psd[ss.setup_index]
        g = band_frf(theta, ss) * (ss.U @ theta.mpf[ss.scheme])      # rows: H Lambda^T U_k
        B = (g.T @ g.conj()).real                                     # Re sum_k g g^H
        StS = np.zeros(d)
        StS[list(ss.sensor_dofs)] = 1.0
        A += w * np.kron(B, np.diag(StS))
        b[list(ss.sensor_dofs)] += w * (ss.Y.T @ g.conj()).real
    return A, b.ravel(order="F")


def update_phi(theta: ModalParameterSet, spectra: BandSpectra) -> np.ndarray:
    """Least-squares mode shapes for fixed MPFs, FRFs and error PSDs."""
    A, b = phi_normal_equations(theta, spectra)
    try:
        x = _spd_solve(A, b, "mode-shape update")
    except IdentifiabilityError as exc:
        raise IdentifiabilityError(
            f"{exc} (a DOF without data or a mode with zero MPF in every scheme)") from None
    return x.reshape(theta.n_dofs, theta.n_modes, order="F")


def lambda_normal_equations(theta: ModalParameterSet, spectra: BandSpectra, s: int):
    m, ds = theta.n_modes, theta.n_inputs
    A = np.zeros((m * ds, m * ds))
    b = np.zeros((m, ds))
    for ss in spectra.setups:
        if ss.scheme != s:
            continue
        w = 1.0 / theta.err_psd[ss.setup_index]
        h = band_frf(theta, ss)
        P = theta.mode_shapes[list(ss.sensor_dofs)]
        U = ss.U
        # sum_k conj(h_j) h_l conj(u_q) u_p (P^T P)_jl, indexed [(j,q),(l,p)]
        W = np.einsum("kj,kl,kq,kp->jqlp", h.conj(), h, U.conj(), U)
        W *= (P.T @ P)[:, None, :, None]
        A += w * W.real.reshape(m * ds, m * ds)
        # sum_k conj(h_j) conj(u_q) (P^T y_k)_j
        b += w * np.einsum("kj,kq,kj->jq", h.conj(), U.conj(), ss.Y @ P).real
    return A, b.ravel()


def update_lambda(theta: ModalParameterSet, spectra: BandSpectra, s: int) -> np.ndarray:
    """Least-squares MPF matrix of shaker scheme ``s``."""
    A, b = lambda_normal_equations(theta, spectra, s)
    try:
        x = _spd_solve(A, b, f"MPF update of shaker scheme {s}")
    except IdentifiabilityError as exc:
        raise IdentifiabilityError(
            f"{exc} (shaker at a node, or a mode not excited by scheme {s})") from None
    return x.reshape(theta.n_modes, theta.n_inputs).T


def renormalize(theta: ModalParameterSet) -> ModalParameterSet:
    """Scale shapes to unit norm, compensate in the MPFs, fix signs."""
    c = np.linalg.norm(theta.mode_shapes, axis=0)
    if np.any(c == 0) or not np.all(np.isfinite(c)):
        raise IdentifiabilityError(f"degenerate mode shape (column norms {c})")
    theta = theta.replace(mode_shapes=theta.mode_shapes / c,
                          mpf=tuple(lam * c for lam in theta.mpf))
    return canonicalize(theta)


class _ModalObjective:
    """NLLF as a function of (ln f, ln zeta) with everything else frozen."""

    def __init__(self, theta: ModalParameterSet, spectra: BandSpectra):
        self.band = spectra.band
        self.parts = []
        self.const = 0.0
        for ss in spectra.setups:
            se = theta.err_psd[ss.setup_index]
            a = ss.U @ theta.mpf[ss.scheme]
            P = theta.mode_shapes[list(ss.sensor_dofs)]
            self.parts.append((ss, a, P, 1.0 / se))
            self.const += ss.n_channels * ss.n_freqs * (np.log(np.pi) + np.log(se))
        self.n_evals = 0

    def __call__(self, x):
        self.n_evals += 1
        fz = np.exp(np.asarray(x).reshape(-1, 2))
        f, z = fz[:, 0], fz[:, 1]
        if np.any(f <= self.band.f_lo) or np.any(f >= self.band.f_hi) or np.any(z >= 1.0):
            return np.inf
        total = self.const
        for ss, a, P, w in self.parts:
            h = frf_value(f[None, :], z[None, :], ss.freqs[:, None], ss.q)
            e = ss.Y - (h * a) @ P.T
            total += w * np.sum(e.real ** 2 + e.imag ** 2)
        return total


def update_freq_damping(theta: ModalParameterSet, spectra: BandSpectra,
                        opts: DescentOptions = DescentOptions()):
    """Nelder-Mead over ``(ln f_i, ln zeta_i)`` starting from the current values.

    Returns ``(freqs, dampings)``; the NLLF never increases because the
    starting point is a simplex vertex.
    """
    obj = _ModalObjective(theta, spectra)
    m = theta.n_modes
    x0 = np.log(np.column_stack([theta.freqs, theta.dampings]).ravel())
    f0 = obj(x0)
    steps = np.tile([opts.simplex_step_logf, opts.simplex_step_logz], m)
    sim = np.vstack([x0, x0 + np.diag(steps)])
    res = minimize(obj, x0, method="Nelder-Mead", options=dict(
        initial_simplex=sim, maxfev=opts.simplex_evals_per_mode * m,
        fatol=opts.simplex_ftol * max(abs(f0), 1.0), xatol=np.inf))
    x = res.x if res.fun <= f0 else x0
    fz = np.exp(x.reshape(m, 2))
    return fz[:, 0], fz[:, 1]


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------
def check_identifiable(theta: ModalParameterSet, spectra: BandSpectra):
    n_unknown = ParameterLayout.for_theta(theta).size
    if spectra.n_data < n_unknown:
        raise IdentifiabilityError(
            f"band has {spectra.n_data} complex data values for {n_unknown} unknowns")


def identify_band(spectra: BandSpectra, theta0: ModalParameterSet,
                  opts: DescentOptions = DescentOptions()):
    """Coordinate-descent MAP estimate; returns ``(theta_hat, trace)``."""
    check_compatible(theta0, spectra)
    check_identifiable(theta0, spectra)
    trace = DescentTrace()
    theta = theta0
    prev = None
    t = 0
    while t < opts.max_iter:
        theta = theta.replace(err_psd=update_se(theta, spectra, trace.flags))
        L = nllf(theta, spectra)
        if not np.isfinite(L):
            raise NumericalError(f"NLLF is not finite at iteration {t}")
        if prev is None:
            trace.initial_nllf = L
        else:
            trace.nllf.append(L)
            _check_monotone(prev, L, t)
            if (prev - L) / abs(prev) < opts.tol:
                trace.reason = "converged"
                break
        prev = L
        t += 1
        for s in range(spectra.n_schemes):
            lam = list(theta.mpf)
            lam[s] = update_lambda(theta, spectra, s)
            theta = theta.replace(mpf=tuple(lam))
        theta = theta.replace(mode_shapes=update_phi(theta, spectra))
        theta = renormalize(theta)
        f, z = update_freq_damping(theta, spectra, opts)
        theta = theta.replace(freqs=f, dampings=z)
        log.debug("iteration %d: NLLF before update %.10g", t, L)
    trace.n_iter = t
    if not trace.converged:
        trace.reason = "max_iter"
        theta = theta.replace(err_psd=update_se(theta, spectra, trace.flags))
        L = nllf(theta, spectra)
        if prev is not None:
            _check_monotone(prev, L, t)
        trace.nllf.append(L)
        trace.flags.append("final_err_psd_refresh")
    return theta, trace


def _check_monotone(prev, cur, t):
    if cur > prev + 1e-9 * max(abs(prev), 1.0):
        raise NumericalError(
            f"NLLF increased at iteration {t}: {prev!r} -> {cur!r}")
