"""Synthetic multi-setup forced-vibration campaigns by modal superposition.

Root-PSD levels are one-sided (g/sqrt(Hz)); the corresponding two-sided
PSD seen in the scaled FFT is ``level**2 / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import signal

from .exceptions import ValidationError
from .model import RESPONSE_KINDS, FrequencyBand, SetupRecord, TestPlan, canonical_signs


@dataclass(frozen=True)
class TrueModalModel:
    freqs: np.ndarray
    dampings: np.ndarray
    mode_shapes: np.ndarray       # d x m, unit columns
    mpf: tuple                    # one d_s x m matrix per shaker scheme
    response_kind: str = "acceleration"

    def __post_init__(self):
        phi = np.array(self.mode_shapes, dtype=float)
        m = phi.shape[1]
        object.__setattr__(self, "freqs", np.array(self.freqs, dtype=float))
        object.__setattr__(self, "dampings", np.array(self.dampings, dtype=float))
        object.__setattr__(self, "mode_shapes", phi)
        object.__setattr__(self, "mpf", tuple(np.array(x, dtype=float).reshape(-1, m) for x in self.mpf))
        if self.freqs.shape != (m,) or self.dampings.shape != (m,):
            raise ValidationError("inconsistent number of modes")
        if np.any(self.freqs <= 0) or np.any((self.dampings <= 0) | (self.dampings >= 1)):
            raise ValidationError("frequencies must be positive and dampings in (0, 1)")
        if not np.allclose(np.linalg.norm(phi, axis=0), 1.0):
            raise ValidationError("true mode shapes must have unit norm")
        if self.response_kind not in RESPONSE_KINDS:
            raise ValidationError(f"unknown response kind {self.response_kind!r}")

    @property
    def n_modes(self) -> int:
        return self.freqs.shape[0]

    @classmethod
    def from_raw(cls, freqs, dampings, shapes, mpf, response_kind="acceleration"):
        """Normalise columns to unit norm and make them sign-canonical.

        The MPFs are taken as given for the unit-norm shapes; only the sign
        flip is carried into them.
        """
        phi = np.array(shapes, dtype=float)
        sg = canonical_signs(phi)
        phi = phi / np.linalg.norm(phi, axis=0) * sg
        return cls(freqs, dampings, phi, tuple(np.asarray(x, dtype=float) * sg for x in mpf),
                   response_kind)

    def select(self, modes) -> "TrueModalModel":
        modes = list(modes)
        return TrueModalModel(self.freqs[modes], self.dampings[modes], self.mode_shapes[:, modes],
                              tuple(x[:, modes] for x in self.mpf), self.response_kind)


@dataclass(frozen=True)
class ExcitationSpec:
    band: tuple = (0.1, 10.0)
    level: float = 0.015          # one-sided root PSD, g/sqrt(Hz)
    pre_roll: float = 5.0
    drive: float = 60.0
    post_roll: float = 5.0
    dt: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.pre_roll, self.drive, self.post_roll) < 0:
            raise ValidationError("durations must be non-negative")
        if not self.dt > 0 or self.level < 0:
            raise ValidationError("dt must be positive and level non-negative")
        lo, hi = self.band
        if not 0 <= lo < hi < 0.5 / self.dt:
            raise ValidationError(f"excitation band {self.band} must lie below Nyquist {0.5 / self.dt}")

    @property
    def n_samples(self) -> int:
        return sum(int(round(t / self.dt)) for t in (self.pre_roll, self.drive, self.post_roll))


def flat_psd_excitation(spec: ExcitationSpec) -> np.ndarray:
    """Random-phase multisine with a flat root PSD over ``spec.band`` during the drive."""
    rng = np.random.default_rng(spec.seed)
    n_pre, n_drive, n_post = (int(round(t / spec.dt)) for t in (spec.pre_roll, spec.drive, spec.post_roll))
    out = np.zeros(n_pre + n_drive + n_post)
    if n_drive < 2:
        return out
    freqs = np.fft.rfftfreq(n_drive, spec.dt)
    inband = (freqs >= spec.band[0]) & (freqs <= spec.band[1]) & (freqs > 0)
    if n_drive % 2 == 0:
        inband[-1] = False          # keep the Nyquist bin real and empty
    mag = np.sqrt(0.5 * spec.level ** 2 * n_drive / spec.dt)
    coeffs = np.zeros(freqs.size, dtype=complex)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=int(inband.sum()))
    coeffs[inband] = mag * np.exp(1j * phases)
    out[n_pre:n_pre + n_drive] = np.fft.irfft(coeffs, n_drive)
    return out


def _modal_filter(f, zeta, dt, kind):
    """Discrete transfer function from modal force to modal response (exact for
    piecewise-linear input)."""
    w = 2.0 * np.pi * f
    A = np.array([[0.0, 1.0], [-w * w, -2.0 * zeta * w]])
    B = np.array([[0.0], [1.0]])
    if kind == "acceleration":
        C, D = np.array([[-w * w, -2.0 * zeta * w]]), np.array([[1.0]])
    elif kind == "velocity":
        C, D = np.array([[0.0, 1.0]]), np.array([[0.0]])
    else:
        C, D = np.array([[1.0, 0.0]]), np.array([[0.0]])
    Ad, Bd, Cd, Dd, _ = signal.cont2discrete((A, B, C, D), dt, method="foh")
    num, den = signal.ss2tf(Ad, Bd, Cd, Dd)
    return num[0], den


def modal_responses(model: TrueModalModel, scheme: int, inputs: np.ndarray, dt: float) -> np.ndarray:
    """Time histories of every modal coordinate (``N x m``) driven by ``Lambda^T u``."""
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    if u.shape[0] == 1 and u.shape[1] != model.mpf[scheme].shape[0]:
        u = u.T
    force = u @ model.mpf[scheme]
    out = np.empty_like(force)
    for i in range(model.n_modes):
        num, den = _modal_filter(model.freqs[i], model.dampings[i], dt, model.response_kind)
        out[:, i] = signal.lfilter(num, den, force[:, i])
    return out


def simulate_setup(model: TrueModalModel, plan: TestPlan, r: int, inputs: np.ndarray, dt: float) -> SetupRecord:
    """Noise-free record of setup ``r`` for the given shaker input (``N x d_s``)."""
    if model.mode_shapes.shape[0] != plan.n_dofs or len(model.mpf) != plan.n_shaker_schemes:
        raise ValidationError("model and plan disagree on DOFs or shaker schemes")
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    eta = modal_responses(model, plan.shaker_scheme_of_setup[r], u, dt)
    y = eta @ model.mode_shapes[list(plan.sensor_selection[r])].T
    return SetupRecord(r, dt, u, y, model.response_kind)


def add_noise(record: SetupRecord, output_level: float, input_level: float = 0.0,
              seed: Optional[int] = None) -> SetupRecord:
    """Add white Gaussian noise of the given one-sided root PSDs (variance ``level^2/(2 dt)``)."""
    if output_level < 0 or input_level < 0:
        raise ValidationError("noise levels must be non-negative")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(2.0 * record.dt)
    y = record.output + (output_level * scale) * rng.standard_normal(record.output.shape) if output_level else record.output
    u = record.input + (input_level * scale) * rng.standard_normal(record.input.shape) if input_level else record.input
    return replace(record, input=u, output=y)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Scenario:
    name: str
    model: TrueModalModel
    plan: TestPlan
    excitation: ExcitationSpec
    output_noise: float
    bands: tuple
    input_noise: float = 0.0
    metadata: dict = field(default_factory=dict)

    def excitation_for(self, r: int, seed: int, channel: int = 0) -> ExcitationSpec:
        key = [seed, r, 0] + ([channel] if channel else [])
        return replace(self.excitation, seed=int(np.random.SeedSequence(key).generate_state(1)[0]))

    def simulate(self, seed: int = 0) -> tuple:
        """One noisy record per setup; everything derives from ``seed``."""
        records = []
        for r in range(self.plan.n_setups):
            # independent drive per shaker so multi-input MPFs stay identifiable
            u = np.column_stack([flat_psd_excitation(self.excitation_for(r, seed, j))
                                 for j in range(self.plan.n_inputs)])
            rec = simulate_setup(self.model, self.plan, r, u, self.excitation.dt)
            noise_seed = int(np.random.SeedSequence([seed, r, 1]).generate_state(1)[0])
            records.append(add_noise(rec, self.output_noise, self.input_noise, noise_seed))
        return tuple(records)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


NOISE_LEVEL = 1e-5          # g/sqrt(Hz)

_BRIDGE_SHAPES_Z = [
    [-0.20, -0.35, -0.41, -0.35, -0.20, -0.20, -0.35, -0.41, -0.35, -0.20],
    [-0.35, -0.35, 0, 0.35, -0.35, -0.35, -0.35, 0, 0.35, 0.35],
    [-0.06, -0.11, -0.12, -0.11, -0.06, 0.06, 0.11, 0.12, 0.11, 0.06],
    [-0.20, -0.35, -0.41, -0.35, -0.20, 0.20, 0.35, 0.41, 0.35, 0.20],
]
_BRIDGE_SHAPES_Y = [
    [0.0] + [0.0] * 9,      # nine listed entries, padded with a leading zero
    [0.0] + [0.0] * 9,
    [0.19, 0.36, 0.42, 0.36, 0.19, 0.19, 0.36, 0.42, 0.36, 0.19],
    [0.06, 0.11, 0.13, 0.11, 0.06, 0.06, 0.11, 0.13, 0.11, 0.06],
]


def bridge_dof(node: int, direction: str) -> int:
    """Global DOF of bridge node 1..10 in direction 'Y' or 'Z'."""
    return (node - 1) + (0 if direction == "Y" else 10)


def _bridge18m() -> Scenario:
    shapes = np.array([y + z for y, z in zip(_BRIDGE_SHAPES_Y, _BRIDGE_SHAPES_Z)]).T
    mpf_z = [[0.0035, 0.0035, 0.0011, 0.0037]]
    mpf_y = [[0.0, 0.0, 0.0037, 0.0011]]
    model = TrueModalModel.from_raw([1.22, 4.74, 5.76, 5.89], [0.02] * 4, shapes, (mpf_z, mpf_y))
    refs = [2, 7]
    configs = {"A": [1, 3, 6, 8], "B": [4, 5, 9, 10]}

    def dofs(cfg):
        nodes = sorted(refs + configs[cfg])
        return [bridge_dof(n, "Y") for n in nodes] + [bridge_dof(n, "Z") for n in nodes]

    plan = TestPlan(
        n_dofs=20, n_inputs=1,
        sensor_selection=[dofs("A"), dofs("B"), dofs("A"), dofs("B")],
        shaker_scheme_of_setup=[0, 0, 1, 1],
        dof_labels=[f"N{n}{d}" for d in "YZ" for n in range(1, 11)])
    bands = (FrequencyBand(1.05, 1.40, 1), FrequencyBand(4.55, 4.93, 1), FrequencyBand(5.50, 6.15, 2))
    return Scenario("bridge18m", model, plan, ExcitationSpec(band=(0.1, 10.0), level=0.015),
                    NOISE_LEVEL, bands,
                    metadata={"nominal_f3_alternative": 5.67,
                              "shaker_schemes": ["Z", "Y"],
                              "reference_nodes": refs})


_FLOOR_CORNERS = ((225.0, 200.0), (-225.0, 200.0), (-225.0, -200.0), (225.0, -200.0))  # mm


def building_dof(floor: int, corner: int, direction: str) -> int:
    """Global DOF of floor 1..6, corner 0..3, direction 'X' or 'Y'."""
    return ((floor - 1) * 4 + corner) * 2 + (0 if direction == "X" else 1)


def _building_shape(kind: str, order: int) -> np.ndarray:
    floors = np.arange(1, 7)
    profile = np.sin((2 * order - 1) * np.pi * floors / 13.0)
    phi = np.zeros(48)
    for j, p in zip(floors, profile):
        for c, (x, y) in enumerate(_FLOOR_CORNERS):
            if kind == "Y":
                ux, uy = 0.0, p
            elif kind == "X":
                ux, uy = p, 0.0
            else:
                ux, uy = -p * y / 1000.0, p * x / 1000.0
            phi[building_dof(j, c, "X")] = ux
            phi[building_dof(j, c, "Y")] = uy
    return phi


def _building6story() -> Scenario:
    kinds = [("Y", 1), ("X", 1), ("T", 1), ("Y", 2), ("X", 2), ("T", 2)]
    shapes = np.column_stack([_building_shape(k, o) for k, o in kinds])
    mpf = [[0.0096, 0.0080, 0.0080, 0.0090, 0.0075, 0.0075]]
    model = TrueModalModel.from_raw([2.87, 2.96, 3.21, 8.44, 8.71, 9.45],
                                    [0.005, 0.005, 0.010, 0.010, 0.012, 0.012], shapes, (mpf,))
    roof = [building_dof(6, c, d) for c in range(4) for d in "XY"]
    selection = [sorted(roof + [building_dof(fl, c, d) for c in range(4) for d in "XY"])
                 for fl in range(1, 6)]
    plan = TestPlan(n_dofs=48, n_inputs=1, sensor_selection=selection,
                    shaker_scheme_of_setup=[0] * 5,
                    dof_labels=[f"F{f}C{c}{d}" for f in range(1, 7) for c in range(4) for d in "XY"])
    bands = (FrequencyBand(2.70, 3.40, 3), FrequencyBand(8.20, 9.00, 2), FrequencyBand(9.20, 9.70, 1))
    return Scenario("building6story", model, plan, ExcitationSpec(band=(0.1, 15.0), level=0.015),
                    NOISE_LEVEL, bands, metadata={"mode_kinds": [f"{k}{o}" for k, o in kinds]})


PRESETS = {"bridge18m": _bridge18m, "building6story": _building6story}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
