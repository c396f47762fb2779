"""Domain types and the frequency-domain forward model.

The model for one frequency band and one setup ``r`` reads

    Y_k = S_r @ Phi @ diag(h_k) @ Lambda_s.T @ U_k,     s = scheme of setup r

where ``Y_k``/``U_k`` are scaled-FFT ordinates of outputs/inputs, ``S_r``
selects the measured DOFs, ``Phi`` holds the (real, unit-norm) mode shapes,
``Lambda_s`` the modal participation factors of shaker scheme ``s`` and
``h_k`` the modal FRFs.  Prediction errors are circular complex Gaussian
with variance ``err_psd[r]`` per channel, which gives :func:`nllf`.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import DomainError, ValidationError

RESPONSE_KINDS = {"acceleration": 0, "velocity": 1, "displacement": 2}


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Test campaign description
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TestPlan:
    """Sensor and shaker layout of a multi-setup campaign.

    Parameters
    ----------
    n_dofs : int
        Number of measured global DOFs ``d`` (union over setups).
    n_inputs : int
        Number of shaker channels ``d_s`` (same in every setup).
    sensor_selection : sequence of sequences of int
        Global DOF index measured by each channel of each setup.
    shaker_scheme_of_setup : sequence of int
        Shaker placement scheme used in each setup.
    n_shaker_schemes : int, optional
        Defaults to ``max(shaker_scheme_of_setup) + 1``.
    dof_labels : sequence of str, optional
        Human-readable DOF names, only used in reports.
    """

    __test__ = False  # not a pytest class

    n_dofs: int
    n_inputs: int
    sensor_selection: tuple
    shaker_scheme_of_setup: tuple
    n_shaker_schemes: Optional[int] = None
    dof_labels: Optional[tuple] = None

    def __post_init__(self):
        sel = tuple(tuple(int(i) for i in s) for s in self.sensor_selection)
        schemes = tuple(int(s) for s in self.shaker_scheme_of_setup)
        object.__setattr__(self, "sensor_selection", sel)
        object.__setattr__(self, "shaker_scheme_of_setup", schemes)
        if self.n_shaker_schemes is None:
            object.__setattr__(self, "n_shaker_schemes", max(schemes) + 1 if schemes else 0)
        if self.dof_labels is not None:
            object.__setattr__(self, "dof_labels", tuple(str(x) for x in self.dof_labels))
        self.validate()

    def validate(self):
        d = self.n_dofs
        if d < 1 or self.n_inputs < 1:
            raise ValidationError("plan needs at least one DOF and one input channel")
        if len(self.sensor_selection) != len(self.shaker_scheme_of_setup):
            raise ValidationError(
                f"{len(self.sensor_selection)} sensor selections but "
                f"{len(self.shaker_scheme_of_setup)} shaker-scheme entries")
        if not self.sensor_selection:
            raise ValidationError("plan has no setups")
        seen = set()
        for r, sel in enumerate(self.sensor_selection):
            if not sel:
                raise ValidationError(f"setup {r} measures no DOF")
            if len(set(sel)) != len(sel):
                raise ValidationError(f"setup {r} lists a DOF twice")
            bad = [i for i in sel if not 0 <= i < d]
            if bad:
                raise ValidationError(f"setup {r}: DOF indices {bad} outside 0..{d - 1}")
            seen.update(sel)
        missing = sorted(set(range(d)) - seen)
        if missing:
            raise ValidationError(f"DOFs {missing} are never measured")
        ns = self.n_shaker_schemes
        bad = [s for s in self.shaker_scheme_of_setup if not 0 <= s < ns]
        if bad:
            raise ValidationError(f"shaker scheme indices {bad} outside 0..{ns - 1}")
        unused = [s for s in range(ns) if s not in self.shaker_scheme_of_setup]
        if unused:
            raise ValidationError(f"shaker schemes {unused} are used by no setup")
        if ns > self.n_setups:
            raise ValidationError("more shaker schemes than setups")
        if self.dof_labels is not None and len(self.dof_labels) != d:
            raise ValidationError("dof_labels length differs from n_dofs")

    @property
    def n_setups(self) -> int:
        return len(self.sensor_selection)

    @property
    def setups_of_scheme(self) -> tuple:
        return tuple(
            tuple(r for r, s in enumerate(self.shaker_scheme_of_setup) if s == j)
            for j in range(self.n_shaker_schemes))

    def n_channels(self, r: int) -> int:
        return len(self.sensor_selection[r])

    def selection_matrix(self, r: int) -> np.ndarray:
        return selection_matrix(self.sensor_selection[r], self.n_dofs)

    def overlap_components(self) -> list:
        """Connected components of the setup graph linked by shared DOFs."""
        n = self.n_setups
        sets = [set(s) for s in self.sensor_selection]
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a in range(n):
            for b in range(a + 1, n):
                if sets[a] & sets[b]:
                    parent[find(a)] = find(b)
        comps = {}
        for i in range(n):
            comps.setdefault(find(i), []).append(i)
        return sorted(comps.values())


def selection_matrix(sensor_dofs: Sequence[int], n_dofs: int) -> np.ndarray:
    S = np.zeros((len(sensor_dofs), n_dofs))
    S[np.arange(len(sensor_dofs)), list(sensor_dofs)] = 1.0
    return S


@dataclass(frozen=True)
class SetupRecord:
    """Raw time histories of one setup.

    ``input`` is ``n_samples x d_s`` shaker acceleration and ``output`` is
    ``n_samples x d_r`` structural response, both in g (g*s for velocity,
    g*s^2 for displacement; see :mod:`modalfft.campaign` for unit handling).
    """

    setup_index: int
    dt: float
    input: np.ndarray
    output: np.ndarray
    response_kind: str = "acceleration"

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.input, dtype=float))
        y = np.atleast_2d(np.asarray(self.output, dtype=float))
        if np.asarray(self.input).ndim == 1:
            u = u.T
        if np.asarray(self.output).ndim == 1:
            y = y.T
        object.__setattr__(self, "input", _frozen(u))
        object.__setattr__(self, "output", _frozen(y))
        if not self.dt > 0:
            raise ValidationError(f"setup {self.setup_index}: dt must be positive")
        if u.shape[0] != y.shape[0]:
            raise ValidationError(
                f"setup {self.setup_index}: input has {u.shape[0]} samples, output {y.shape[0]}")
        if self.response_kind not in RESPONSE_KINDS:
            raise ValidationError(
                f"response_kind must be one of {sorted(RESPONSE_KINDS)}, got {self.response_kind!r}")

    @property
    def n_samples(self) -> int:
        return self.input.shape[0]

    @property
    def q(self) -> int:
        return RESPONSE_KINDS[self.response_kind]

    @property
    def nyquist(self) -> float:
        return 0.5 / self.dt


@dataclass(frozen=True)
class FrequencyBand:
    """Band ``[f_lo, f_hi]`` (Hz) assumed to contain ``n_modes`` modes."""

    f_lo: float
    f_hi: float
    n_modes: int
    init_frequencies: Optional[tuple] = None

    def __post_init__(self):
        if self.init_frequencies is not None:
            object.__setattr__(self, "init_frequencies",
                               tuple(float(f) for f in self.init_frequencies))
        if not 0 < self.f_lo < self.f_hi:
            raise ValidationError(f"invalid band [{self.f_lo}, {self.f_hi}] Hz")
        if self.n_modes < 1:
            raise ValidationError("a band must contain at least one mode")
        seeds = self.init_frequencies
        if seeds is not None:
            if len(seeds) != self.n_modes:
                raise ValidationError(
                    f"{len(seeds)} seed frequencies for {self.n_modes} modes")
            if any(not self.f_lo < f < self.f_hi for f in seeds):
                raise ValidationError("seed frequencies must lie strictly inside the band")
            if any(b <= a for a, b in zip(seeds, seeds[1:])):
                raise ValidationError("seed frequencies must be strictly increasing")

    def check_nyquist(self, nyquist: float):
        if not self.f_hi < nyquist:
            raise ValidationError(
                f"band upper edge {self.f_hi} Hz is not below Nyquist {nyquist} Hz")


@dataclass(frozen=True)
class SetupSpectra:
    """Band-limited scaled-FFT ordinates of one setup."""

    setup_index: int
    scheme: int
    sensor_dofs: tuple
    bins: np.ndarray
    freqs: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    q: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sensor_dofs", tuple(int(i) for i in self.sensor_dofs))
        object.__setattr__(self, "bins", _frozen(self.bins, dtype=np.int64))
        object.__setattr__(self, "freqs", _frozen(self.freqs))
        object.__setattr__(self, "Y", _frozen(np.atleast_2d(self.Y), dtype=complex))
        object.__setattr__(self, "U", _frozen(np.atleast_2d(self.U), dtype=complex))
        nf = len(self.bins)
        if self.Y.shape != (nf, len(self.sensor_dofs)):
            raise ValidationError(f"setup {self.setup_index}: Y has shape {self.Y.shape}")
        if self.U.shape[0] != nf:
            raise ValidationError(f"setup {self.setup_index}: U has shape {self.U.shape}")

    @property
    def n_freqs(self) -> int:
        return len(self.bins)

    @property
    def n_channels(self) -> int:
        return len(self.sensor_dofs)


@dataclass(frozen=True)
class BandSpectra:
    band: FrequencyBand
    setups: tuple
    n_dofs: int
    n_inputs: int
    n_schemes: int

    @property
    def n_setups(self) -> int:
        return len(self.setups)

    @property
    def n_data(self) -> int:
        """Total number of complex data values ``sum_r d_r N_f^(r)``."""
        return sum(s.n_freqs * s.n_channels for s in self.setups)


@dataclass(frozen=True)
class ModalParameterSet:
    """All unknowns of one band.

    ``mode_shapes`` is ``d x m``; ``mpf`` is a tuple with one ``d_s x m``
    matrix per shaker scheme; ``err_psd`` has one entry per setup.
    """

    freqs: np.ndarray
    dampings: np.ndarray
    mode_shapes: np.ndarray
    mpf: tuple
    err_psd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "freqs", _frozen(np.atleast_1d(self.freqs)))
        object.__setattr__(self, "dampings", _frozen(np.atleast_1d(self.dampings)))
        phi = np.asarray(self.mode_shapes, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        object.__setattr__(self, "mode_shapes", _frozen(phi))
        lam = []
        for x in self.mpf:
            x = np.asarray(x, dtype=float)
            lam.append(_frozen(x.reshape(-1, phi.shape[1]) if x.ndim < 2 else x))
        object.__setattr__(self, "mpf", tuple(lam))
        object.__setattr__(self, "err_psd", _frozen(np.atleast_1d(self.err_psd)))
        m = self.n_modes
        if self.dampings.shape != (m,) or phi.shape[1] != m:
            raise ValidationError("inconsistent number of modes across parameter blocks")
        if any(x.shape[1] != m for x in self.mpf):
            raise ValidationError("MPF matrices must have one column per mode")
        if len({x.shape for x in self.mpf}) > 1:
            raise ValidationError("all MPF matrices must share the same shape")

    @property
    def n_modes(self) -> int:
        return self.freqs.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.mode_shapes.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.mpf[0].shape[0] if self.mpf else 0

    def replace(self, **changes) -> "ModalParameterSet":
        return replace(self, **changes)

    def check_invariants(self, band: Optional[FrequencyBand] = None, atol: float = 1e-8):
        """Raise :class:`ValidationError` if a documented invariant fails."""
        norms = np.linalg.norm(self.mode_shapes, axis=0)
        if not np.allclose(norms, 1.0, atol=atol):
            raise ValidationError(f"mode shapes are not unit norm: {norms}")
        idx = np.argmax(np.abs(self.mode_shapes), axis=0)
        if np.any(self.mode_shapes[idx, np.arange(self.n_modes)] < 0):
            raise ValidationError("mode shapes are not sign-canonical")
        if np.any(self.dampings <= 0) or np.any(self.dampings >= 1):
            raise ValidationError(f"damping ratios outside (0, 1): {self.dampings}")
        if np.any(self.err_psd <= 0):
            raise ValidationError("error PSDs must be positive")
        if band is not None and np.any((self.freqs <= band.f_lo) | (self.freqs >= band.f_hi)):
            raise ValidationError(f"frequencies {self.freqs} outside band")


# ---------------------------------------------------------------------------
# Parameter vector layout and commutation matrices
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ParameterLayout:
    """Flattening order of the parameter vector.

    ``[f_1, z_1, ..., f_m, z_m, vec(Phi), vec(Lambda_1), ..., vec(Lambda_ns),
    Se_1, ..., Se_nr]`` with column-major ``vec``.
    """

    n_modes: int
    n_dofs: int
    n_inputs: int
    n_schemes: int
    n_setups: int

    @classmethod
    def for_theta(cls, theta: ModalParameterSet) -> "ParameterLayout":
        return cls(theta.n_modes, theta.n_dofs, theta.n_inputs, len(theta.mpf),
                   len(theta.err_psd))

    @property
    def size(self) -> int:
        m, d, ds = self.n_modes, self.n_dofs, self.n_inputs
        return 2 * m + d * m + self.n_schemes * ds * m + self.n_setups

    @property
    def modal(self) -> slice:
        return slice(0, 2 * self.n_modes)

    @property
    def phi(self) -> slice:
        a = 2 * self.n_modes
        return slice(a, a + self.n_dofs * self.n_modes)

    def mpf(self, s: int) -> slice:
        n = self.n_inputs * self.n_modes
        a = self.phi.stop + s * n
        return slice(a, a + n)

    def err_psd(self, r: int) -> slice:
        a = self.phi.stop + self.n_schemes * self.n_inputs * self.n_modes + r
        return slice(a, a + 1)

    def offsets(self) -> dict:
        out = {"theta_m": self.modal, "phi": self.phi}
        out.update({f"mpf[{s}]": self.mpf(s) for s in range(self.n_schemes)})
        out.update({f"err_psd[{r}]": self.err_psd(r) for r in range(self.n_setups)})
        return out

    def phi_column(self, i: int) -> slice:
        a = self.phi.start + i * self.n_dofs
        return slice(a, a + self.n_dofs)

    def flatten(self, theta: ModalParameterSet) -> np.ndarray:
        v = np.empty(self.size)
        v[self.modal] = np.column_stack([theta.freqs, theta.dampings]).ravel()
        v[self.phi] = theta.mode_shapes.ravel(order="F")
        for s, lam in enumerate(theta.mpf):
            v[self.mpf(s)] = lam.ravel(order="F")
        v[self.phi.stop + self.n_schemes * self.n_inputs * self.n_modes:] = theta.err_psd
        return v

    def unflatten(self, v: np.ndarray) -> ModalParameterSet:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ValidationError(f"expected vector of length {self.size}, got {v.shape}")
        m, d, ds = self.n_modes, self.n_dofs, self.n_inputs
        fz = v[self.modal].reshape(m, 2)
        return ModalParameterSet(
            freqs=fz[:, 0], dampings=fz[:, 1],
            mode_shapes=v[self.phi].reshape(d, m, order="F"),
            mpf=tuple(v[self.mpf(s)].reshape(ds, m, order="F") for s in range(self.n_schemes)),
            err_psd=v[self.phi.stop + self.n_schemes * ds * m:],
        )


def diag_embedding(m: int) -> np.ndarray:
    """``L_d`` (m^2 x m) with ``vec(D) = L_d @ diag(D)`` for diagonal ``D``."""
    L = np.zeros((m * m, m))
    L[np.arange(m) * (m + 1), np.arange(m)] = 1.0
    return L


def commutation_matrix(rows: int, cols: int) -> np.ndarray:
    """``K`` with ``vec(X.T) = K @ vec(X)`` for ``X`` of shape (rows, cols)."""
    K = np.zeros((rows * cols, rows * cols))
    i, j = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    K[(i * cols + j).ravel(), (j * rows + i).ravel()] = 1.0
    return K


@dataclass(frozen=True)
class CommutationMatrices:
    L_d: np.ndarray
    K_md: np.ndarray
    K_ml: np.ndarray

    @classmethod
    def for_layout(cls, layout: ParameterLayout) -> "CommutationMatrices":
        m = layout.n_modes
        return cls(diag_embedding(m), commutation_matrix(layout.n_dofs, m),
                   commutation_matrix(layout.n_inputs, m))


# ---------------------------------------------------------------------------
# FRF, forward model, likelihood, constraints
# ---------------------------------------------------------------------------
def frf_value(f, zeta, f_k, q: int = 0):
    """Modal FRF ``(2*pi*i*f_k)**-q / ((1 - b**2) - 2j*zeta*b)``, ``b = f/f_k``.

    Broadcasts over array arguments.  Negative ``zeta`` is accepted (it gives
    the complex conjugate for ``q = 0``); a non-finite value raises.
    """
    f = np.asarray(f, dtype=float)
    f_k = np.asarray(f_k, dtype=float)
    if np.any(f <= 0) or np.any(f_k <= 0):
        raise DomainError("frequencies must be positive")
    beta = f / f_k
    with np.errstate(divide="ignore", invalid="ignore"):
        h = 1.0 / ((1.0 - beta ** 2) - 2j * np.asarray(zeta, dtype=float) * beta)
        if q:
            h = h * (2j * np.pi * f_k) ** (-q)
    if not np.all(np.isfinite(h)):
        raise DomainError("FRF is not finite (undamped mode evaluated at resonance)")
    return h[()] if np.ndim(h) == 0 else h


def band_frf(theta: ModalParameterSet, ss: SetupSpectra) -> np.ndarray:
    """FRFs of all modes at all bins of one setup, shape ``(N_f, m)``."""
    return frf_value(theta.freqs[None, :], theta.dampings[None, :], ss.freqs[:, None], ss.q)


def setup_prediction(theta: ModalParameterSet, ss: SetupSpectra, h=None) -> np.ndarray:
    """Model mean ``S Phi H Lambda^T U`` for every bin, shape ``(N_f, d_r)``."""
    if h is None:
        h = band_frf(theta, ss)
    a = ss.U @ theta.mpf[ss.scheme]                     # (N_f, m): Lambda^T U_k
    P = theta.mode_shapes[list(ss.sensor_dofs)]         # S Phi
    return (h * a) @ P.T


def predicted_fft(theta: ModalParameterSet, spectra: BandSpectra, r: int, k: int) -> np.ndarray:
    """Predicted output FFT of setup ``r`` at its ``k``-th in-band bin."""
    ss = spectra.setups[r]
    if not 0 <= k < ss.n_freqs:
        raise ValidationError(f"bin {k} outside band of setup {r}")
    h = frf_value(theta.freqs, theta.dampings, ss.freqs[k], ss.q)
    P = theta.mode_shapes[list(ss.sensor_dofs)]
    return P @ (h * (theta.mpf[ss.scheme].T @ ss.U[k]))


def residual_energy(theta: ModalParameterSet, ss: SetupSpectra) -> float:
    """``sum_k |Y_k - model_k|^2`` for one setup."""
    e = ss.Y - setup_prediction(theta, ss)
    return float(np.sum(e.real ** 2 + e.imag ** 2))


def nllf(theta: ModalParameterSet, spectra: BandSpectra) -> float:
    """Negative log-likelihood of the band data."""
    se = theta.err_psd
    if np.any(se <= 0):
        raise DomainError("error PSD must be positive")
    total = 0.0
    for ss in spectra.setups:
        n = ss.n_channels * ss.n_freqs
        s = se[ss.setup_index]
        total += n * (np.log(np.pi) + np.log(s)) + residual_energy(theta, ss) / s
    return float(total)


def constraint_values(theta: ModalParameterSet) -> np.ndarray:
    return np.sum(theta.mode_shapes ** 2, axis=0) - 1.0


def constraint_jacobian(theta: ModalParameterSet, layout: Optional[ParameterLayout] = None):
    if layout is None:
        layout = ParameterLayout.for_theta(theta)
    J = np.zeros((theta.n_modes, layout.size))
    for i in range(theta.n_modes):
        J[i, layout.phi_column(i)] = 2.0 * theta.mode_shapes[:, i]
    return J


def canonical_signs(mode_shapes: np.ndarray) -> np.ndarray:
    """+1/-1 per column making the largest-magnitude entry positive."""
    idx = np.argmax(np.abs(mode_shapes), axis=0)
    vals = mode_shapes[idx, np.arange(mode_shapes.shape[1])]
    return np.where(vals < 0, -1.0, 1.0)


def canonicalize(theta: ModalParameterSet) -> ModalParameterSet:
    """Flip mode-shape/MPF sign pairs so shapes are sign-canonical."""
    sg = canonical_signs(theta.mode_shapes)
    if np.all(sg > 0):
        return theta
    return theta.replace(mode_shapes=theta.mode_shapes * sg,
                         mpf=tuple(lam * sg for lam in theta.mpf))


def check_compatible(theta: ModalParameterSet, spectra: BandSpectra):
    if theta.n_dofs != spectra.n_dofs:
        raise ValidationError(f"theta has {theta.n_dofs} DOFs, data {spectra.n_dofs}")
    if len(theta.mpf) != spectra.n_schemes or theta.n_inputs != spectra.n_inputs:
        raise ValidationError("MPF blocks do not match the shaker layout of the data")
    if len(theta.err_psd) != spectra.n_setups:
        raise ValidationError("one error PSD per setup is required")
