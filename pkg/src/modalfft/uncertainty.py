"""Analytic Hessian of the NLLF and the constrained Laplace posterior covariance.

For one setup write the residual ``e_k = y_k - mu_k`` with
``mu_k = sum_j P_j h_kj a_kj`` where ``P = S Phi``, ``a_k = Lambda^T u_k``.
With ``A = sum_k ||e_k||^2`` and ``J = d mu / d x`` (complex, over the real
parameters ``x`` = modal, shape and MPF entries)

    d2A/dx dx' = 2 Re(J^H J) - 2 Re sum_k e_k^H d2mu_k/dx dx'

The model is linear in ``Phi`` and in ``Lambda`` and couples them only
within the same mode, so the curvature term has just five non-zero kinds
of entries (shape-MPF, shape-modal, MPF-modal and modal-modal).  The
NLLF Hessian follows by weighting each setup with ``1/Se`` and adding the
error-PSD rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .exceptions import NotAMinimumError, NumericalError, ValidationError
from .model import (BandSpectra, ModalParameterSet, ParameterLayout,
                    constraint_jacobian, frf_value, setup_prediction)


# ---------------------------------------------------------------------------
# FRF derivatives
# ---------------------------------------------------------------------------
def frf_derivatives(f, zeta, f_k, q: int = 0) -> dict:
    """Value and first/second partials of the modal FRF in ``f`` and ``zeta``.

    With ``D = 1 - b**2 - 2j*zeta*b``, ``b = f/f_k`` and ``c = (2j*pi*f_k)**-q``:
    ``h = c/D``, ``h_f = 2c(b + j*zeta)/(f_k D^2)``, ``h_zeta = 2j c b/D^2``,
    ``h_ff = 2c/f_k^2 (1/D^2 + 4(b + j*zeta)^2/D^3)``,
    ``h_fzeta = 2j c/f_k (1/D^2 + 4b(b + j*zeta)/D^3)``,
    ``h_zetazeta = -8 c b^2/D^3``.
    """
    h = frf_value(f, zeta, f_k, q)
    f = np.asarray(f, dtype=float)
    f_k = np.asarray(f_k, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    b = f / f_k
    D = (1.0 - b ** 2) - 2j * zeta * b
    c = (2j * np.pi * f_k) ** (-q) if q else 1.0
    w = b + 1j * zeta
    D2, D3 = D ** 2, D ** 3
    out = {
        "h": h,
        "h_f": 2.0 * c * w / (f_k * D2),
        "h_zeta": 2j * c * b / D2,
        "h_ff": 2.0 * c / f_k ** 2 * (1.0 / D2 + 4.0 * w ** 2 / D3),
        "h_fzeta": 2j * c / f_k * (1.0 / D2 + 4.0 * b * w / D3),
        "h_zetazeta": -8.0 * c * b ** 2 / D3,
    }
    out["h_zetaf"] = out["h_fzeta"]
    for k, v in out.items():
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"FRF derivative {k} is not finite")
    return out


# ---------------------------------------------------------------------------
# Hessian
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HessianBlocks:
    """Assembled NLLF Hessian with named views into its blocks."""

    matrix: np.ndarray
    layout: ParameterLayout

    def _slices(self):
        lay = self.layout
        out = {"theta_m": lay.modal, "phi": lay.phi}
        out.update({f"mpf[{s}]": lay.mpf(s) for s in range(lay.n_schemes)})
        out.update({f"err_psd[{r}]": lay.err_psd(r) for r in range(lay.n_setups)})
        return out

    def block(self, row: str, col: str) -> np.ndarray:
        sl = self._slices()
        return self.matrix[sl[row], sl[col]]

    @property
    def names(self):
        return tuple(self._slices())


def _setup_jacobian(theta, ss, layout):
    """Complex Jacobian of the flattened prediction (bins x channels, row-major)
    over all real parameters, plus the FRF derivative kernels."""
    m, ds = theta.n_modes, theta.n_inputs
    nf, dr = ss.n_freqs, ss.n_channels
    dofs = list(ss.sensor_dofs)
    der = frf_derivatives(theta.freqs[None, :], theta.dampings[None, :],
                          ss.freqs[:, None], ss.q)
    h = der["h"]
    a = ss.U @ theta.mpf[ss.scheme]                 # (nf, m)
    g = h * a
    P = theta.mode_shapes[dofs]                     # (dr, m)
    J = np.zeros((nf, dr, layout.size), dtype=complex)
    for j in range(m):
        J[:, :, 2 * j] = (a[:, j] * der["h_f"][:, j])[:, None] * P[:, j]
        J[:, :, 2 * j + 1] = (a[:, j] * der["h_zeta"][:, j])[:, None] * P[:, j]
        base = layout.phi_column(j).start
        for c, p in enumerate(dofs):
            J[:, c, base + p] = g[:, j]
        mp = layout.mpf(ss.scheme)
        for qi in range(ds):
            # vec(Lambda) column-major: entry (qi, j) sits at j*ds + qi
            J[:, :, mp.start + j * ds + qi] = (h[:, j] * ss.U[:, qi])[:, None] * P[:, j]
    return J.reshape(nf * dr, layout.size), der, a, P


def _curvature(theta, ss, layout, der, a, P, E):
    """``Re sum_k e_k^H d2mu_k`` over the real parameters (symmetric)."""
    m, ds = theta.n_modes, theta.n_inputs
    dofs = list(ss.sensor_dofs)
    C = np.zeros((layout.size, layout.size))
    Ec = E.conj()                                   # (nf, dr)
    Ep = Ec @ P                                     # (nf, m): e_k^H P_j
    h = der["h"]
    mp = layout.mpf(ss.scheme)
    for j in range(m):
        fi, zi = 2 * j, 2 * j + 1
        phi_cols = [layout.phi_column(j).start + p for p in dofs]
        lam_cols = [mp.start + j * ds + qi for qi in range(ds)]
        # modal-modal
        for (r_, c_), key in (((fi, fi), "h_ff"), ((fi, zi), "h_fzeta"),
                              ((zi, zi), "h_zetazeta")):
            v = np.sum(Ep[:, j] * a[:, j] * der[key][:, j]).real
            C[r_, c_] += v
            if r_ != c_:
                C[c_, r_] += v
        # shape-MPF: d2mu/dPhi[p,j] dLambda[q,j] = S_p h_kj u_kq
        sl = (Ec * h[:, j:j + 1]).T @ ss.U          # (dr, ds)
        C[np.ix_(phi_cols, lam_cols)] += sl.real
        # shape-modal: d2mu/dPhi[p,j] dx_j = S_p a_kj h_x
        for col, key in ((fi, "h_f"), (zi, "h_zeta")):
            v = (Ec.T @ (a[:, j] * der[key][:, j])).real
            C[phi_cols, col] += v
            # MPF-modal: d2mu/dLambda[q,j] dx_j = P_j u_kq h_x
            w = (ss.U.T @ (Ep[:, j] * der[key][:, j])).real
            C[lam_cols, col] += w
    # mirror the off-diagonal (shape/MPF/modal) parts
    upper = C.copy()
    np.fill_diagonal(upper, 0.0)
    modal = layout.modal
    upper[modal, modal] = 0.0
    return C + upper.T


def hessian(theta: ModalParameterSet, spectra: BandSpectra) -> HessianBlocks:
    """Exact Hessian of :func:`modalfft.model.nllf` over the flattened parameters."""
    layout = ParameterLayout.for_theta(theta)
    H = np.zeros((layout.size, layout.size))
    for ss in spectra.setups:
        r = ss.setup_index
        se = theta.err_psd[r]
        E = ss.Y - setup_prediction(theta, ss)
        J, der, a, P = _setup_jacobian(theta, ss, layout)
        e = E.ravel()
        energy = float(np.sum(e.real ** 2 + e.imag ** 2))
        hess_A = 2.0 * (J.conj().T @ J).real - 2.0 * _curvature(theta, ss, layout, der, a, P, E)
        H += hess_A / se
        # d/dSe of (dA/dx)/Se where dA/dx = -2 Re(e^H J)
        grad_A = -2.0 * (e.conj() @ J).real
        col = layout.err_psd(r).start
        H[:, col] += -grad_A / se ** 2
        H[col, :] += -grad_A / se ** 2
        n = ss.n_channels * ss.n_freqs
        H[col, col] = -n / se ** 2 + 2.0 * energy / se ** 3
    if not np.all(np.isfinite(H)):
        blocks = HessianBlocks(H, layout)
        bad = [a for a in blocks.names for b in blocks.names
               if not np.all(np.isfinite(blocks.block(a, b)))]
        raise NumericalError(f"non-finite Hessian entries in blocks {sorted(set(bad))}")
    return HessianBlocks(0.5 * (H + H.T), layout)


# ---------------------------------------------------------------------------
# Posterior covariance
# ---------------------------------------------------------------------------
def nullspace_basis(theta: ModalParameterSet) -> np.ndarray:
    """Orthonormal basis of the null space of the constraint Jacobian."""
    G = constraint_jacobian(theta)
    if np.linalg.matrix_rank(G) < theta.n_modes:
        raise ValidationError("constraint Jacobian is rank deficient (zero mode shape)")
    return scipy.linalg.null_space(G)


def posterior_covariance(hess, basis: np.ndarray) -> np.ndarray:
    """``N (N^T H N)^-1 N^T``; raises if the projected Hessian is not positive definite."""
    H = hess.matrix if isinstance(hess, HessianBlocks) else np.asarray(hess)
    proj = basis.T @ H @ basis
    proj = 0.5 * (proj + proj.T)
    try:
        chol = scipy.linalg.cho_factor(proj)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(proj)
        raise NotAMinimumError(
            f"projected Hessian is not positive definite (smallest eigenvalue {ev[0]:.3g})"
        ) from None
    inner = scipy.linalg.cho_solve(chol, np.eye(proj.shape[0]))
    pcm = basis @ inner @ basis.T
    return 0.5 * (pcm + pcm.T)


def mac(a, b, squared: bool = False) -> float:
    """Absolute cosine between two shape vectors (squared with ``squared=True``)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValidationError("MAC of a zero vector is undefined")
    c = min(abs(float(a @ b)) / (na * nb), 1.0)
    return c * c if squared else c


@dataclass
class PosteriorResult:
    theta_hat: ModalParameterSet
    pcm: np.ndarray
    cov_f: np.ndarray
    cov_zeta: np.ndarray
    cov_shape: np.ndarray
    cov_mpf: tuple
    cov_err_psd: np.ndarray
    std_f: np.ndarray
    std_zeta: np.ndarray
    nllf_value: float = float("nan")
    trace: Optional[object] = None
    flags: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return bool(self.trace is not None and self.trace.converged)


def _cov(values, std, flags, what):
    values = np.asarray(values, dtype=float)
    out = np.empty_like(std)
    zero = values == 0
    out[~zero] = std[~zero] / np.abs(values[~zero])
    out[zero] = std[zero]
    if np.any(zero):
        flags.append(f"{what}: zero MAP value, c.o.v. reported as absolute std")
    return out


def summarize(theta_hat: ModalParameterSet, pcm: np.ndarray, nllf_value: float = float("nan"),
              trace=None) -> PosteriorResult:
    """Posterior standard deviations and c.o.v.s from the covariance matrix."""
    layout = ParameterLayout.for_theta(theta_hat)
    pcm = np.asarray(pcm, dtype=float)
    if pcm.shape != (layout.size, layout.size):
        raise ValidationError(f"covariance shape {pcm.shape} does not match layout size {layout.size}")
    std = np.sqrt(np.clip(np.diag(pcm), 0.0, None))
    flags = []
    m = theta_hat.n_modes
    modal = std[layout.modal].reshape(m, 2)
    std_f, std_z = modal[:, 0], modal[:, 1]
    cov_shape = np.array([np.sqrt(max(np.trace(pcm[layout.phi_column(i), layout.phi_column(i)]), 0.0))
                          for i in range(m)])
    cov_mpf = tuple(
        _cov(lam, std[layout.mpf(s)].reshape(lam.shape, order="F"), flags, f"mpf[{s}]")
        for s, lam in enumerate(theta_hat.mpf))
    se_std = np.array([std[layout.err_psd(r)][0] for r in range(layout.n_setups)])
    return PosteriorResult(
        theta_hat=theta_hat, pcm=pcm,
        cov_f=_cov(theta_hat.freqs, std_f, flags, "freqs"),
        cov_zeta=_cov(theta_hat.dampings, std_z, flags, "dampings"),
        cov_shape=cov_shape, cov_mpf=cov_mpf,
        cov_err_psd=_cov(theta_hat.err_psd, se_std, flags, "err_psd"),
        std_f=std_f, std_zeta=std_z, nllf_value=nllf_value, trace=trace, flags=flags)
