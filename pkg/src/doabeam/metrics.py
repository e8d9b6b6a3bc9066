"""Evaluation metrics: permutation RMSPE, alignment, micro-F1, K accuracy.

Angle errors are wrapped into (-pi/2, pi/2] before squaring, so estimates
that differ from the truth by a multiple of pi count as (nearly) correct;
the interval choice matters only at the endpoints and is fixed here.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .beamform import Peak, SpatialSpectrum
from .errors import ShapeError, ValidationError

MAX_PERMUTATION_K = 8


def wrap(x):
    """Map angle difference(s) into (-pi/2, pi/2] by shifting multiples of pi."""
    x = np.asarray(x, dtype=np.float64)
    out = x - math.pi * np.ceil(x / math.pi - 0.5)
    return float(out) if out.ndim == 0 else out


def rmspe(truth: Sequence[float], est: Sequence[float]) -> float:
    """Min over truth-to-estimate permutations of the wrapped RMSE."""
    truth = np.asarray(truth, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if truth.shape != est.shape or truth.ndim != 1:
        raise ShapeError(
            f"rmspe needs equal-length vectors, got {truth.shape} and {est.shape}; "
            "align the estimates first"
        )
    k = len(truth)
    if k == 0:
        raise ValidationError("rmspe needs at least one angle")
    if k > MAX_PERMUTATION_K:
        raise ValidationError(f"K={k} exceeds the {MAX_PERMUTATION_K}! permutation budget")
    best = math.inf
    for perm in permutations(range(k)):
        err = wrap(truth - est[list(perm)])
        best = min(best, float(np.sqrt(np.mean(err * err))))
    return best


def align(
    est: Sequence[Peak] | Sequence[tuple],
    k: int,
    spectrum: SpatialSpectrum | None = None,
) -> np.ndarray:
    """Force the estimate list to exactly K angles.

    Longer lists keep the K strongest estimates. Shorter lists are padded
    with the grid angles of the spectrum's top-K energy grids, strongest
    first, skipping angles already present.
    """
    if k < 1:
        raise ValidationError("K must be >= 1")
    ordered = sorted(
        ((float(e[0]), float(e[1])) for e in est), key=lambda p: -p[1]
    )
    if len(ordered) >= k:
        return np.array([a for a, _ in ordered[:k]], dtype=np.float64)
    if spectrum is None or spectrum.grid is None:
        raise ValidationError("nothing to pad from: pass the full spectrum")
    angles = [a for a, _ in ordered]
    present = set(angles)
    top = np.argsort(-spectrum.p, kind="stable")[:k]
    for idx in top:
        if len(angles) == k:
            break
        cand = float(spectrum.grid.thetas[idx])
        if cand not in present:
            angles.append(cand)
            present.add(cand)
    if len(angles) < k:
        raise ValidationError("spectrum too short to pad the estimate list")
    return np.array(angles, dtype=np.float64)


def f1_counts(pred_rho, labels, threshold: float = 0.5) -> tuple[int, int, int]:
    """(TP, FP, FN) of thresholded probabilities against a binary mask."""
    pred_rho = np.atleast_2d(np.asarray(pred_rho, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels))
    if pred_rho.shape != labels.shape:
        raise ShapeError(f"prediction {pred_rho.shape} vs labels {labels.shape}")
    pos = pred_rho >= threshold
    truth = labels != 0
    tp = int(np.sum(pos & truth))
    fp = int(np.sum(pos & ~truth))
    fn = int(np.sum(~pos & truth))
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def micro_f1(pred_rho, labels, threshold: float = 0.5) -> float:
    """Micro-averaged F1; rows of 2-D inputs aggregate into one count pool."""
    return f1_from_counts(*f1_counts(pred_rho, labels, threshold))


def labels_to_indicator(grid_labels, r: int) -> np.ndarray:
    out = np.zeros(r, dtype=np.int64)
    out[np.asarray(grid_labels, dtype=np.int64)] = 1
    return out


@dataclass(frozen=True)
class EvalRecord:
    """One evaluated sample: scenario descriptors plus metric outcomes."""

    method: str
    k_true: int
    t: int
    snr_db: float
    rho_err: float
    coherent: bool
    seed: int
    rmspe_rad: float
    k_est: int
    f1: float

    def __post_init__(self):
        if self.rmspe_rad < 0 or not 0.0 <= self.f1 <= 1.0:
            raise ValidationError("rmspe must be >= 0 and f1 in [0, 1]")

    @property
    def k_correct(self) -> bool:
        return self.k_est == self.k_true


EVAL_CSV_COLUMNS = [
    "method",
    "K",
    "T",
    "snr_db",
    "rho_err",
    "coherent",
    "seed",
    "rmspe_rad",
    "k_est",
    "k_true",
    "f1",
]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def records_to_csv(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVAL_CSV_COLUMNS)
    for r in records:
        writer.writerow(
            [
                r.method,
                _fmt(r.k_true),
                _fmt(r.t),
                _fmt(r.snr_db),
                _fmt(r.rho_err),
                _fmt(r.coherent),
                _fmt(r.seed),
                _fmt(r.rmspe_rad),
                _fmt(r.k_est),
                _fmt(r.k_true),
                _fmt(r.f1),
            ]
        )
    return buf.getvalue()


def k_accuracy(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise ValidationError("no records to aggregate")
    return sum(1 for r in records if r.k_correct) / len(records)


def aggregate_rmspe(values: Sequence[float]) -> float:
    """RMS aggregation of per-sample RMSPE values."""
    if len(values) == 0:
        raise ValidationError("no values to aggregate")
    arr = np.asarray(values, dtype=np.float64)
    return float(np.sqrt(np.mean(arr * arr)))
