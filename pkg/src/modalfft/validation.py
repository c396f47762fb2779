"""Input checks shared by the estimator front end."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError
from .model import FrequencyBand, SetupRecord, TestPlan


def check_plan(plan) -> TestPlan:
    if not isinstance(plan, TestPlan):
        raise ValidationError(f"plan must be a TestPlan, got {type(plan).__name__}")
    return plan


def check_band(band) -> FrequencyBand:
    if isinstance(band, FrequencyBand):
        return band
    if isinstance(band, dict):
        return FrequencyBand(float(band["f_lo"]), float(band["f_hi"]), int(band["m"]), band.get("seeds"))
    try:
        f_lo, f_hi, m = band
        return FrequencyBand(float(f_lo), float(f_hi), int(m))
    except (TypeError, ValueError):
        raise ValidationError("band must be a FrequencyBand, a dict or a (f_lo, f_hi, m) triple") from None


def check_signal(x, name: str, n_columns: int) -> np.ndarray:
    """Finite 2-D float array with the expected number of columns."""
    try:
        arr = check_array(x, dtype=np.float64, ensure_2d=False, ensure_all_finite=True)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from None
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[1] != n_columns:
        raise ValidationError(f"{name}: expected {n_columns} columns, got {arr.shape[1]}")
    return arr


def check_records(records: Sequence, plan: TestPlan) -> tuple:
    """Validate one record per setup against the plan."""
    records = tuple(records)
    if len(records) != plan.n_setups:
        raise ValidationError(f"{len(records)} records for a plan with {plan.n_setups} setups")
    out = []
    for r, rec in enumerate(records):
        if not isinstance(rec, SetupRecord):
            raise ValidationError(f"record {r} is a {type(rec).__name__}, not a SetupRecord")
        if rec.setup_index != r:
            raise ValidationError(f"record {r} carries setup_index {rec.setup_index}")
        check_signal(rec.input, f"setup {r} input", plan.n_inputs)
        check_signal(rec.output, f"setup {r} output", plan.n_channels(r))
        out.append(rec)
    return tuple(out)
