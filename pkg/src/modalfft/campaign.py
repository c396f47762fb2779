"""Dataset manifests, band configs, the identification pipeline and reports.

Manifests, band configs and reports are JSON.  Data files hold one row per
sample with the input columns first, either as comma-separated text or as
raw little-endian float64 (row-major).
"""
from __future__ import annotations

import copy
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .estimator import DescentOptions, identify_band
from .exceptions import (AssemblyError, IdentifiabilityError, ModalIDError, NumericalError,
                         ValidationError)
from .initializer import init_theta
from .model import RESPONSE_KINDS, FrequencyBand, SetupRecord, TestPlan, nllf
from .spectral import band_spectra, scaled_fft, smoothed_psd, sv_spectrum
from .uncertainty import hessian, mac, nullspace_basis, posterior_covariance, summarize

log = logging.getLogger(__name__)

STANDARD_GRAVITY = 9.80665
MANIFEST_FORMAT = "modalfft-dataset"
REPORT_FORMAT = "modalfft-report"

# unit -> (factor to the package's g-based unit, response kinds it may describe)
UNITS = {
    "g": (1.0, ("acceleration",)),
    "m/s^2": (1.0 / STANDARD_GRAVITY, ("acceleration",)),
    "g*s": (1.0, ("velocity",)),
    "m/s": (1.0 / STANDARD_GRAVITY, ("velocity",)),
    "g*s^2": (1.0, ("displacement",)),
    "m": (1.0 / STANDARD_GRAVITY, ("displacement",)),
}

EXIT_OK, EXIT_VALIDATION, EXIT_NOT_CONVERGED, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------
def _unit_factor(unit: str, kind: str, where: str) -> float:
    if unit not in UNITS:
        raise ValidationError(f"{where}: unknown unit {unit!r}; accepted units: {sorted(UNITS)}")
    factor, kinds = UNITS[unit]
    if kind not in kinds:
        raise ValidationError(f"{where}: unit {unit!r} does not describe {kind} data")
    return factor


def _read_table(path: Path, layout: str, n_cols: int, where: str) -> np.ndarray:
    if not path.is_file():
        raise ValidationError(f"{where}: data file {str(path)!r} not found")
    if layout == "csv":
        try:
            data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        except ValueError as exc:
            raise ValidationError(f"{where}: cannot parse {path.name}: {exc}") from None
    elif layout == "binary":
        raw = np.fromfile(path, dtype="<f8")
        if raw.size % n_cols:
            raise ValidationError(
                f"{where}: {path.name} holds {raw.size} values, not a multiple of {n_cols} columns")
        data = raw.reshape(-1, n_cols)
    else:
        raise ValidationError(f"{where}: layout must be 'csv' or 'binary', got {layout!r}")
    if data.shape[1] != n_cols:
        raise ValidationError(
            f"{where}: {path.name} has {data.shape[1]} columns, manifest declares {n_cols} "
            f"(inputs + outputs)")
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise ValidationError(f"{where}: non-finite value in {path.name}, data row {bad + 1}")
    return data


def load_dataset(manifest_path) -> tuple:
    """Read a manifest and its data files; returns ``(plan, records)``."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"manifest {str(manifest_path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{manifest_path.name}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        p = doc["plan"]
        plan = TestPlan(n_dofs=int(p["n_dofs"]), n_inputs=int(p["n_inputs"]),
                        sensor_selection=p["sensor_selection"],
                        shaker_scheme_of_setup=p["shaker_scheme_of_setup"],
                        n_shaker_schemes=p.get("n_shaker_schemes"),
                        dof_labels=p.get("dof_labels"))
        setups = doc["setups"]
    except KeyError as exc:
        raise ValidationError(f"{manifest_path.name}: missing key {exc}") from None
    if len(setups) != plan.n_setups:
        raise ValidationError(f"{manifest_path.name}: {len(setups)} setup entries for {plan.n_setups} setups")
    if len(plan.overlap_components()) > 1:
        warnings.warn(f"setups form disconnected groups {plan.overlap_components()}; "
                      "mode shapes cannot be assembled", UserWarning, stacklevel=2)
    records = []
    for r, s in enumerate(setups):
        where = f"{manifest_path.name} setup {r}"
        kind = s.get("response_kind", "acceleration")
        if kind not in RESPONSE_KINDS:
            raise ValidationError(f"{where}: response_kind must be one of {sorted(RESPONSE_KINDS)}")
        n_in = int(s.get("n_input_columns", plan.n_inputs))
        n_out = int(s.get("n_output_columns", plan.n_channels(r)))
        if n_in != plan.n_inputs or n_out != plan.n_channels(r):
            raise ValidationError(
                f"{where}: declares {n_in}+{n_out} columns, plan needs {plan.n_inputs}+{plan.n_channels(r)}")
        in_factor = _unit_factor(s.get("input_units", "g"), "acceleration", where)
        out_factor = _unit_factor(s.get("output_units", "g"), kind, where)
        data = _read_table(manifest_path.parent / s["file"], s.get("layout", "csv"), n_in + n_out, where)
        records.append(SetupRecord(r, float(s["dt"]), data[:, :n_in] * in_factor,
                                   data[:, n_in:] * out_factor, kind))
    return plan, tuple(records)


def write_dataset(out_dir, plan: TestPlan, records: Sequence[SetupRecord], layout: str = "csv",
                  metadata: Optional[dict] = None) -> Path:
    """Write records (in g units) and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        table = np.hstack([rec.input, rec.output])
        name = f"setup{rec.setup_index:02d}." + ("csv" if layout == "csv" else "bin")
        if layout == "csv":
            header = ",".join([f"u{j}" for j in range(rec.input.shape[1])] +
                              [f"y{j}" for j in range(rec.output.shape[1])])
            np.savetxt(out / name, table, delimiter=",", fmt="%.17g", header=header)
        elif layout == "binary":
            table.astype("<f8").tofile(out / name)
        else:
            raise ValidationError(f"layout must be 'csv' or 'binary', got {layout!r}")
        unit = {"acceleration": "g", "velocity": "g*s", "displacement": "g*s^2"}[rec.response_kind]
        entries.append({"file": name, "layout": layout, "dt": rec.dt,
                        "response_kind": rec.response_kind,
                        "n_input_columns": rec.input.shape[1],
                        "n_output_columns": rec.output.shape[1],
                        "input_units": "g", "output_units": unit})
    doc = {"format": MANIFEST_FORMAT, "version": 1,
           "plan": {"n_dofs": plan.n_dofs, "n_inputs": plan.n_inputs,
                    "sensor_selection": [list(s) for s in plan.sensor_selection],
                    "shaker_scheme_of_setup": list(plan.shaker_scheme_of_setup),
                    "n_shaker_schemes": plan.n_shaker_schemes,
                    "dof_labels": list(plan.dof_labels) if plan.dof_labels else None},
           "setups": entries, "metadata": metadata or {}}
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


# ---------------------------------------------------------------------------
# Bands config
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BandConfig:
    band: FrequencyBand
    reference_shapes: Optional[np.ndarray] = None     # d x m


def parse_bands(doc, n_dofs: Optional[int] = None) -> tuple:
    items = doc.get("bands") if isinstance(doc, dict) else doc
    if not items:
        raise ValidationError("bands config lists no bands")
    out = []
    for b, item in enumerate(items):
        try:
            band = FrequencyBand(float(item["f_lo"]), float(item["f_hi"]), int(item["m"]),
                                 item.get("seeds"))
        except KeyError as exc:
            raise ValidationError(f"band {b}: missing key {exc}") from None
        ref = item.get("reference_shapes")
        if ref is not None:
            ref = np.asarray(ref, dtype=float).T
            if ref.shape[1] != band.n_modes or (n_dofs is not None and ref.shape[0] != n_dofs):
                raise ValidationError(f"band {b}: reference_shapes must list {band.n_modes} shapes of length {n_dofs}")
        out.append(BandConfig(band, ref))
    return tuple(out)


def load_bands(path, n_dofs: Optional[int] = None) -> tuple:
    path = Path(path)
    try:
        return parse_bands(json.loads(path.read_text()), n_dofs)
    except FileNotFoundError:
        raise ValidationError(f"bands config {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path.name}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def bands_document(configs: Sequence[BandConfig]) -> dict:
    items = []
    for c in configs:
        item = {"f_lo": c.band.f_lo, "f_hi": c.band.f_hi, "m": c.band.n_modes}
        if c.band.init_frequencies is not None:
            item["seeds"] = list(c.band.init_frequencies)
        if c.reference_shapes is not None:
            item["reference_shapes"] = (np.asarray(c.reference_shapes).T + 0.0).tolist()   # no -0.0
        items.append(item)
    return {"bands": items}


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------
def _digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class IdentificationReport:
    header: dict
    bands: list

    def body(self) -> dict:
        header = {k: v for k, v in self.header.items() if k != "generated_at"}
        return {"format": REPORT_FORMAT, "header": header, "bands": self.bands}

    @property
    def digest(self) -> str:
        return _digest(self.body())

    def to_dict(self) -> dict:
        doc = self.body()
        doc["header"] = dict(self.header)
        doc["report_digest"] = self.digest
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc) -> "IdentificationReport":
        if doc.get("format") != REPORT_FORMAT:
            raise ValidationError("not an identification report")
        rep = cls(dict(doc["header"]), copy.deepcopy(doc["bands"]))
        if "report_digest" in doc and doc["report_digest"] != rep.digest:
            raise ValidationError("report digest mismatch (file modified?)")
        return rep

    @classmethod
    def loads(cls, text: str) -> "IdentificationReport":
        return cls.from_dict(json.loads(text))

    @property
    def exit_code(self) -> int:
        statuses = {b["status"] for b in self.bands}
        if "invalid" in statuses:
            return EXIT_VALIDATION
        if "numeric_failure" in statuses:
            return EXIT_NUMERIC
        if "not_converged" in statuses:
            return EXIT_NOT_CONVERGED
        return EXIT_OK


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
           else _dt.datetime.now(_dt.timezone.utc))
    return now.isoformat(timespec="seconds")


def _matrix(x) -> list:
    return np.asarray(x, dtype=float).tolist()


def _band_result(index, cfg, plan, records, ffts, opts, sv_window, frf_window) -> dict:
    band = cfg.band
    entry = {"index": index, "f_lo": band.f_lo, "f_hi": band.f_hi, "n_modes": band.n_modes}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            spectra = band_spectra(records, plan, band, ffts)
            guess = init_theta(spectra, plan, sv_window, frf_window)
            theta, trace = identify_band(spectra, guess.theta, opts)
        entry.update({
            "initial_frequencies": list(guess.seeds),
            "converged": trace.converged, "n_iter": trace.n_iter,
            "termination": trace.reason,
            "nllf": nllf(theta, spectra),
            "nllf_trace": [trace.initial_nllf] + list(trace.nllf),
            "freqs": _matrix(theta.freqs), "dampings": _matrix(theta.dampings),
            "mode_shapes": _matrix(theta.mode_shapes.T),
            "mpf": [_matrix(x) for x in theta.mpf],
            "err_psd": _matrix(theta.err_psd),
            "flags": list(trace.flags) + sorted({f"{w.category.__name__}: {w.message}" for w in caught}),
        })
        if cfg.reference_shapes is not None:
            entry["mac"] = [mac(theta.mode_shapes[:, i], cfg.reference_shapes[:, i])
                            for i in range(band.n_modes)]
        try:
            post = summarize(theta, posterior_covariance(hessian(theta, spectra), nullspace_basis(theta)))
            entry["cov"] = {"freqs": _matrix(post.cov_f), "dampings": _matrix(post.cov_zeta),
                            "mode_shapes": _matrix(post.cov_shape),
                            "mpf": [_matrix(x) for x in post.cov_mpf],
                            "err_psd": _matrix(post.cov_err_psd)}
            entry["std"] = {"freqs": _matrix(post.std_f), "dampings": _matrix(post.std_zeta)}
            entry["flags"] += post.flags
        except NumericalError as exc:
            if trace.converged:
                raise
            entry["flags"].append(f"posterior covariance unavailable: {exc}")
        entry["status"] = "ok" if trace.converged else "not_converged"
    except (ValidationError, IdentifiabilityError, AssemblyError) as exc:
        entry.update(status="invalid", error=f"{type(exc).__name__}: {exc}")
    except (NumericalError, ModalIDError) as exc:
        entry.update(status="numeric_failure", error=f"{type(exc).__name__}: {exc}")
    return entry


def input_digest(paths: Sequence, extra: Optional[dict] = None) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).name.encode())
        h.update(Path(p).read_bytes())
    if extra is not None:
        h.update(json.dumps(extra, sort_keys=True).encode())
    return h.hexdigest()


def run(plan: TestPlan, records: Sequence[SetupRecord], bands: Sequence[BandConfig],
        opts: DescentOptions = DescentOptions(), sv_window: int = 5, frf_window: int = 3,
        digest: str = "", options: Optional[dict] = None, max_workers: Optional[int] = None
        ) -> IdentificationReport:
    """Identify every band (concurrently) and collect an ordered report."""
    if not bands:
        raise ValidationError("no bands to identify")
    ffts = [(scaled_fft(r.input, r.dt), scaled_fft(r.output, r.dt)) for r in records]
    with ThreadPoolExecutor(max_workers=max_workers or min(len(bands), os.cpu_count() or 1)) as pool:
        futures = [pool.submit(_band_result, b, cfg, plan, records, ffts, opts, sv_window, frf_window)
                   for b, cfg in enumerate(bands)]
        results = [f.result() for f in futures]
    header = {"tool": "modalfft", "tool_version": __version__, "input_digest": digest,
              "generated_at": _timestamp(),
              "options": dict(options or {}, tol=opts.tol, max_iter=opts.max_iter,
                              sv_window=sv_window, frf_window=frf_window)}
    return IdentificationReport(header, results)


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------
def _write_csv(path: Path, header: Sequence[str], rows: np.ndarray, first=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(rows):
            lead = list(first[i]) if first is not None else []
            w.writerow(lead + [repr(float(v)) for v in row])


def setup_sv_spectrum(record: SetupRecord, sv_window: int = 5):
    """SV spectrum over all positive bins below Nyquist."""
    n = record.n_samples
    Y = scaled_fft(record.output, record.dt)
    k = np.arange(1, (n + 1) // 2)
    return sv_spectrum(Y[k], k / (n * record.dt), sv_window)


def export_plots(records: Sequence[SetupRecord], plan: TestPlan, report: IdentificationReport,
                 out_dir, sv_window: int = 5) -> list:
    """Write delimited tables for SV spectra, input root PSDs and identified shapes."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create plot directory {str(out)!r}: {exc}") from None
    written = []
    for rec in records:
        sv = setup_sv_spectrum(rec, sv_window)
        p = out / f"sv_setup{rec.setup_index:02d}.csv"
        _write_csv(p, ["freq_hz"] + [f"sv{j + 1}" for j in range(sv.singular_values.shape[1])],
                   np.column_stack([sv.freqs, sv.singular_values]))
        written.append(p)
        n = rec.n_samples
        k = np.arange(1, (n + 1) // 2)
        U = scaled_fft(rec.input, rec.dt)[k]
        root = np.sqrt(2.0 * smoothed_psd(U, sv_window))          # one-sided, g/sqrt(Hz)
        p = out / f"input_root_psd_setup{rec.setup_index:02d}.csv"
        _write_csv(p, ["freq_hz"] + [f"u{j}" for j in range(U.shape[1])],
                   np.column_stack([k / (n * rec.dt), root]))
        written.append(p)
    labels = plan.dof_labels or tuple(str(i) for i in range(plan.n_dofs))
    for band in report.bands:
        if "mode_shapes" not in band:
            continue
        shapes = np.asarray(band["mode_shapes"]).T
        p = out / f"shapes_band{band['index']:02d}.csv"
        _write_csv(p, ["dof", "label"] + [f"mode{i + 1}" for i in range(shapes.shape[1])],
                   shapes, first=[(i, labels[i]) for i in range(plan.n_dofs)])
        written.append(p)
    return written


def read_table(path) -> tuple:
    """Read a plot-data file back as ``(header, rows)`` of strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
