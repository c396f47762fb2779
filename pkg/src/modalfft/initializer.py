"""Initial guess for the coordinate descent.

Peaks of the singular-value spectra seed the frequencies, damping starts
at 1%, a rank-one reading of the FRF matrix at each seed gives local mode
shapes and MPF seeds, and a chain of scalar least-squares fits through the
shared reference DOFs merges the local shapes into global ones.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from .estimator import update_se
from .exceptions import AssemblyError, CloseModesWarning, ValidationError
from .model import (BandSpectra, FrequencyBand, ModalParameterSet, TestPlan,
                    canonical_signs, frf_value)
from .spectral import FrfEstimate, SvSpectrum, frf_estimate, sv_spectrum

INITIAL_DAMPING = 0.01
SEPARATION_RATIO = 1e3


@dataclass(frozen=True)
class LocalShapeSet:
    """Per setup ``r`` and mode ``i``: ``shapes[r][i]`` (unit, length ``d_r``),
    ``mpf_seeds[r][i]`` (length ``d_s``) and ``singular_values[r][i]``
    (the two leading singular values of the FRF matrix at the seed bin)."""

    shapes: tuple
    mpf_seeds: tuple
    singular_values: tuple
    seed_bins: tuple

    @property
    def n_setups(self) -> int:
        return len(self.shapes)

    @property
    def n_modes(self) -> int:
        return len(self.shapes[0]) if self.shapes else 0


# ---------------------------------------------------------------------------
# Peak picking
# ---------------------------------------------------------------------------
def _setup_peaks(sv: SvSpectrum, column: int, min_relative_prominence: float):
    """Local maxima of one singular-value curve scored by prominence over the median.

    Ripples whose prominence is below ``min_relative_prominence`` times the
    strongest peak of the same curve are dropped.
    """
    curve = sv.singular_values[:, column]
    if curve.size < 3:
        return []
    idx, props = find_peaks(curve, prominence=0.0)
    if idx.size == 0:
        return []
    prom = props["prominences"]
    keep = prom >= min_relative_prominence * prom.max()
    scale = np.median(curve)
    if not scale > 0:
        scale = np.max(curve) if np.max(curve) > 0 else 1.0
    return [(float(sv.freqs[i]), float(p / scale)) for i, p in zip(idx[keep], prom[keep])]


def _cluster(peaks, radius):
    """Greedy grouping: the strongest unassigned peak absorbs all peaks within
    ``radius`` Hz of it.  Returns (score-weighted centroid, total score) pairs."""
    remaining = sorted(peaks, key=lambda p: -p[1])
    out = []
    while remaining:
        anchor = remaining[0][0]
        members = [p for p in remaining if abs(p[0] - anchor) <= radius]
        remaining = [p for p in remaining if abs(p[0] - anchor) > radius]
        fs = np.array([p[0] for p in members])
        ws = np.array([p[1] for p in members])
        centroid = float(np.sum(fs * ws) / np.sum(ws)) if np.sum(ws) > 0 else float(fs.mean())
        out.append((centroid, float(np.sum(ws))))
    return out


def pick_peaks(svs: Sequence[SvSpectrum], band: FrequencyBand, cluster_bins: int = 2,
               min_relative_prominence: float = 0.05) -> tuple:
    """``band.n_modes`` seed frequencies from pooled SV-spectrum peaks.

    User-supplied ``band.init_frequencies`` are returned unchanged.
    """
    if band.init_frequencies is not None:
        return tuple(band.init_frequencies)
    m = band.n_modes
    if any(sv.freqs.size < m for sv in svs):
        raise ValidationError(f"band [{band.f_lo}, {band.f_hi}] has fewer bins than modes")
    spacing = max(float(np.min(np.diff(sv.freqs))) if sv.freqs.size > 1 else 0.0 for sv in svs)
    radius = cluster_bins * spacing
    pooled = [p for sv in svs for p in _setup_peaks(sv, 0, min_relative_prominence)]
    clusters = _cluster(pooled, radius)
    if len(clusters) < m:
        # a weaker mode can hide under the first singular value
        pooled += [p for sv in svs if sv.singular_values.shape[1] > 1
                   for p in _setup_peaks(sv, 1, min_relative_prominence)]
        clusters = _cluster(pooled, radius)
    if len(clusters) < m:
        raise ValidationError(
            f"found {len(clusters)} distinct spectral peaks in [{band.f_lo}, {band.f_hi}] Hz "
            f"but {m} modes were requested; supply init_frequencies for this band")
    best = sorted(clusters, key=lambda c: -c[1])[:m]
    return tuple(sorted(c[0] for c in best))


# ---------------------------------------------------------------------------
# Local shapes from the FRF matrix
# ---------------------------------------------------------------------------
def _real_unit(u: np.ndarray) -> np.ndarray:
    """Rotate a complex vector to be as real as possible and normalise it."""
    k = int(np.argmax(np.abs(u)))
    x = (u * np.exp(-1j * np.angle(u[k]))).real
    x = x / np.linalg.norm(x)
    return x * (1.0 if x[np.argmax(np.abs(x))] >= 0 else -1.0)


def local_mode_shapes(frfs: Sequence[FrfEstimate], f_seeds: Sequence[float], q: Sequence[int] = None,
                      zeta0: float = INITIAL_DAMPING) -> LocalShapeSet:
    """Leading singular pair of the FRF matrix at the bin nearest each seed.

    The MPF seed inverts the rank-one resonance relation
    ``H ~ x h(f_seed, zeta0) lambda^T`` for the real unit shape ``x``.
    """
    if q is None:
        q = [0] * len(frfs)
    shapes, seeds, svals, bins = [], [], [], []
    for est, qr in zip(frfs, q):
        rs, rl, rv, rb = [], [], [], []
        for f in f_seeds:
            k = int(np.argmin(np.abs(est.freqs - f)))
            H = est.H[k]
            U, s, Vh = np.linalg.svd(H)
            s2 = s[1] if s.size > 1 else 0.0
            if s.size > 1 and s[0] < SEPARATION_RATIO * s2:
                warnings.warn(
                    f"setup {est.setup_index}: FRF at {est.freqs[k]:.4g} Hz is not clearly rank one "
                    f"(sigma1/sigma2 = {s[0] / max(s2, 1e-300):.3g}); closely spaced modes",
                    CloseModesWarning, stacklevel=2)
            x = _real_unit(U[:, 0])
            h0 = frf_value(f, zeta0, est.freqs[k], qr)
            lam = (x @ H / h0).real
            rs.append(x)
            rl.append(lam)
            rv.append((float(s[0]), float(s2)))
            rb.append(k)
        shapes.append(tuple(rs))
        seeds.append(tuple(rl))
        svals.append(tuple(rv))
        bins.append(tuple(rb))
    return LocalShapeSet(tuple(shapes), tuple(seeds), tuple(svals), tuple(bins))


# ---------------------------------------------------------------------------
# Global assembly
# ---------------------------------------------------------------------------
def assembly_order(plan: TestPlan) -> list:
    """Setup 0 first, then repeatedly the setup sharing most DOFs with those placed."""
    comps = plan.overlap_components()
    if len(comps) > 1:
        raise AssemblyError(f"setups do not share reference DOFs; disconnected groups: {comps}")
    order = [0]
    placed = set(plan.sensor_selection[0])
    remaining = list(range(1, plan.n_setups))
    while remaining:
        best = max(remaining, key=lambda r: (len(placed & set(plan.sensor_selection[r])), -r))
        order.append(best)
        placed |= set(plan.sensor_selection[best])
        remaining.remove(best)
    return order


def assemble_global(locals_: LocalShapeSet, plan: TestPlan, weights=None) -> np.ndarray:
    """Merge local shapes into unit-norm, sign-canonical global shapes (``d x m``).

    Each new setup's local shape is scaled by ``alpha = <x, g>/<x, x>`` on
    the DOFs already assembled; overlapping entries are averaged with
    weights ``sigma_1^2`` (the FRF energy of that setup and mode) unless
    ``weights[r][i]`` is given.
    """
    order = assembly_order(plan)
    d, m = plan.n_dofs, locals_.n_modes
    Phi = np.zeros((d, m))
    for i in range(m):
        acc = np.zeros(d)
        wsum = np.zeros(d)
        for pos, r in enumerate(order):
            dofs = np.array(plan.sensor_selection[r])
            x = np.asarray(locals_.shapes[r][i], dtype=float)
            w = (locals_.singular_values[r][i][0] ** 2 if weights is None else weights[r][i])
            w = max(float(w), np.finfo(float).tiny)
            if pos == 0:
                alpha = 1.0
            else:
                known = wsum[dofs] > 0
                g = acc[dofs][known] / wsum[dofs][known]
                xs = x[known]
                denom = float(xs @ xs)
                if denom == 0.0:
                    raise AssemblyError(
                        f"mode {i}: setup {r} local shape vanishes on the shared DOFs")
                alpha = float(xs @ g) / denom
            acc[dofs] += w * alpha * x
            wsum[dofs] += w
        phi = acc / wsum
        nrm = np.linalg.norm(phi)
        if nrm == 0.0:
            raise AssemblyError(f"mode {i}: assembled shape is zero")
        Phi[:, i] = phi / nrm
    return Phi * canonical_signs(Phi)


# ---------------------------------------------------------------------------
# Full initial guess
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class InitialGuess:
    theta: ModalParameterSet
    seeds: tuple
    local: LocalShapeSet
    sv: tuple


def init_theta(spectra: BandSpectra, plan: TestPlan, sv_window: int = 5, frf_window: int = 3,
               zeta0: float = INITIAL_DAMPING) -> InitialGuess:
    """Initial parameter set for one band."""
    svs = tuple(sv_spectrum(ss.Y, ss.freqs, sv_window) for ss in spectra.setups)
    seeds = pick_peaks(svs, spectra.band)
    frfs = [frf_estimate(ss, frf_window) for ss in spectra.setups]
    local = local_mode_shapes(frfs, seeds, [ss.q for ss in spectra.setups], zeta0)
    Phi = assemble_global(local, plan)
    m, ds = len(seeds), spectra.n_inputs
    sums = np.zeros((spectra.n_schemes, ds, m))
    counts = np.zeros(spectra.n_schemes)
    for ss in spectra.setups:
        r = ss.setup_index
        P = Phi[list(ss.sensor_dofs)]
        for i in range(m):
            p = P[:, i]
            pp = float(p @ p)
            # H/h ~ x lambda_loc^T = (S phi) lambda^T  ->  project x onto S phi
            ratio = float(local.shapes[r][i] @ p) / pp if pp > 0 else 0.0
            sums[ss.scheme, :, i] += local.mpf_seeds[r][i] * ratio
        counts[ss.scheme] += 1
    mpf = tuple(sums[s] / counts[s] for s in range(spectra.n_schemes))
    theta = ModalParameterSet(freqs=np.array(seeds), dampings=np.full(m, zeta0),
                              mode_shapes=Phi, mpf=mpf, err_psd=np.ones(spectra.n_setups))
    theta = theta.replace(err_psd=update_se(theta, spectra))
    return InitialGuess(theta, tuple(seeds), local, svs)
