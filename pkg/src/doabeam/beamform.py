"""Classical beamformers, the oracle spatial filter, and spectrum tools.

A spatial filter is a matrix B whose row i is b_i^H; applying it to the
snapshots X yields one output stream per steered grid. All spectra here use
the same per-snapshot normalization P_i = ||row_i(BX)||^2 / T so one
probability threshold is comparable across methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .arraymodel import AngleGrid
from .complexlin import ComplexMatrix, frobenius, hermitian_eig, lstsq, matmul
from .errors import InfeasibleError, ShapeError, SingularMatrixError, ValidationError

MVDR_DEFAULT_LOADING = 1e-6
_SNR_CAP_DB = 300.0


@dataclass(frozen=True)
class SpatialFilter:
    """Rows of b_i^H; typically R x M over the full grid (oracle: K x M)."""

    b: ComplexMatrix
    method: str

    def row(self, i: int) -> "SpatialFilter":
        return SpatialFilter(
            ComplexMatrix(self.b.re[i : i + 1], self.b.im[i : i + 1]), self.method
        )


@dataclass(frozen=True)
class SpatialSpectrum:
    """Per-grid mean output energy P and its tanh probability map rho."""

    p: np.ndarray
    rho: np.ndarray
    grid: Optional[AngleGrid]

    def __post_init__(self):
        if self.grid is not None and len(self.p) != self.grid.r:
            raise ShapeError(f"spectrum length {len(self.p)} vs grid R={self.grid.r}")


class Peak(NamedTuple):
    angle_rad: float
    energy: float
    index: int


def _spectrum(p: np.ndarray, grid: Optional[AngleGrid]) -> SpatialSpectrum:
    p = np.maximum(np.asarray(p, dtype=np.float64), 0.0)
    return SpatialSpectrum(p=p, rho=np.tanh(p), grid=grid)


def cbf_filter(a: ComplexMatrix) -> SpatialFilter:
    """Conventional beamformer: row i is a_i^H / M."""
    m = a.rows
    return SpatialFilter(ComplexMatrix(a.re.T / m, -a.im.T / m), "cbf")


def mvdr_filter(
    x: ComplexMatrix, a: ComplexMatrix, loading: float = MVDR_DEFAULT_LOADING
) -> SpatialFilter:
    """Minimum-variance distortionless filter rows for every grid angle.

    R_hat = XX^H + loading * (trace(XX^H)/M) * I. With loading 0 a singular
    covariance (e.g. T < M) raises instead of returning garbage.
    """
    if x.rows != a.rows:
        raise ShapeError(f"X is {x.shape} but manifold is {a.shape}")
    if loading < 0:
        raise ValidationError("diagonal loading must be nonnegative")
    m = x.rows
    xz = x.to_complex()
    r_hat = xz @ xz.conj().T
    tr = float(np.trace(r_hat).real)
    if loading > 0:
        r_hat = r_hat + (loading * tr / m) * np.eye(m)
    else:
        evals = np.linalg.eigvalsh(0.5 * (r_hat + r_hat.conj().T))
        if evals[0] <= 1e-12 * max(evals[-1], 1.0):
            raise SingularMatrixError(
                "sample covariance is singular; pass loading > 0"
            )
    az = a.to_complex()
    z = np.linalg.solve(r_hat, az)
    denom = np.einsum("ij,ij->j", az.conj(), z).real
    b_cols = z / denom
    return SpatialFilter(ComplexMatrix.from_complex(b_cols.conj().T), "mvdr")


def music_spectrum(
    x: ComplexMatrix, a: ComplexMatrix, k: int, grid: Optional[AngleGrid] = None
) -> SpatialSpectrum:
    """Noise-subspace pseudo-spectrum 1 / (a_i^H E_n E_n^H a_i)."""
    if not 1 <= k < x.rows:
        raise ValidationError(f"need 1 <= K < M, got K={k}, M={x.rows}")
    if x.rows != a.rows:
        raise ShapeError(f"X is {x.shape} but manifold is {a.shape}")
    xz = x.to_complex()
    cov = ComplexMatrix.from_complex(xz @ xz.conj().T / x.cols)
    _, v = hermitian_eig(cov)
    e_n = v.to_complex()[:, k:]
    den = np.maximum(
        np.sum(np.abs(e_n.conj().T @ a.to_complex()) ** 2, axis=0), 1e-12
    )
    return _spectrum(1.0 / den, grid)


def noise_subspace(n: ComplexMatrix, rel_tol: float = 1e-10) -> ComplexMatrix:
    """Orthonormal basis of span(N): eigenvectors of NN^H above rel_tol*max."""
    nz = n.to_complex()
    w, v = hermitian_eig(ComplexMatrix.from_complex(nz @ nz.conj().T))
    if len(w) == 0 or w[0] <= 0:
        return ComplexMatrix.zeros(n.rows, 0)
    r = int(np.sum(w > rel_tol * w[0]))
    return ComplexMatrix.from_complex(v.to_complex()[:, :r])


def oracle_filter(
    a_active: ComplexMatrix, s: ComplexMatrix, n_sub: ComplexMatrix
) -> tuple[SpatialFilter, tuple[float, float]]:
    """Exact focusing filter: b_i^H [A_active | N_sub] = [e_i^T | 0].

    Feasible only when K + r <= M; returns the K filter rows (one per source
    grid) plus the residuals (||B A S - S||_F, ||B N_sub||_F).
    """
    m, k = a_active.shape
    r = n_sub.cols
    if n_sub.rows != m:
        raise ShapeError(f"noise basis is {n_sub.shape}, expected {m} rows")
    if s.rows != k:
        raise ShapeError(f"S is {s.shape}, expected {k} rows")
    if k + r > m:
        raise InfeasibleError(
            f"K + r = {k + r} exceeds M = {m}: not enough degrees of freedom"
        )
    cz = np.hstack([a_active.to_complex(), n_sub.to_complex()])
    dz = np.hstack([np.eye(k), np.zeros((k, r))])
    y, _ = lstsq(ComplexMatrix.from_complex(cz.T), ComplexMatrix.from_complex(dz.T))
    b = ComplexMatrix.from_complex(y.to_complex().T)
    filt = SpatialFilter(b, "oracle")
    focus = frobenius(
        ComplexMatrix.from_complex(
            b.to_complex() @ a_active.to_complex() @ s.to_complex() - s.to_complex()
        )
    )
    null = frobenius(matmul(b, n_sub)) if r > 0 else 0.0
    return filt, (focus, null)


def spectrum_from_filter(
    filt: SpatialFilter, x: ComplexMatrix, grid: Optional[AngleGrid] = None
) -> SpatialSpectrum:
    """P_i = mean over snapshots of |row_i(B X)|^2; rho = tanh(P)."""
    if filt.b.cols != x.rows:
        raise ShapeError(f"filter is {filt.b.shape} but X is {x.shape}")
    y = matmul(filt.b, x)
    p = np.mean(y.re * y.re + y.im * y.im, axis=1)
    return _spectrum(p, grid)


def peak_search(spec: SpatialSpectrum, threshold: float) -> list[Peak]:
    """Thresholded local maxima, strongest first.

    Grids with rho >= threshold are grouped into contiguous runs; within each
    run a peak is a value-segment strictly above both neighbors (run edges
    count as below); a plateau yields its leftmost grid.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValidationError("threshold must lie in [0, 1)")
    if spec.grid is None:
        raise ValidationError("peak search needs a grid-backed spectrum")
    kept = np.flatnonzero(spec.rho >= threshold)
    peaks: list[Peak] = []
    run: list[int] = []
    for pos, idx in enumerate(kept):
        run.append(int(idx))
        is_last = pos == len(kept) - 1 or kept[pos + 1] != idx + 1
        if not is_last:
            continue
        segments: list[tuple[float, int]] = []  # (value, leftmost index)
        for i in run:
            v = float(spec.p[i])
            if not segments or segments[-1][0] != v:
                segments.append((v, i))
        for si, (v, left) in enumerate(segments):
            before = segments[si - 1][0] if si > 0 else -math.inf
            after = segments[si + 1][0] if si + 1 < len(segments) else -math.inf
            if v > before and v > after:
                peaks.append(Peak(float(spec.grid.thetas[left]), v, left))
        run = []
    peaks.sort(key=lambda p: (-p.energy, p.index))
    return peaks


def weighting_matrix(filt: SpatialFilter, a: ComplexMatrix) -> np.ndarray:
    """Element-wise modulus of B A: response of each filter row per source grid."""
    if filt.b.cols != a.rows:
        raise ShapeError(f"filter is {filt.b.shape} but manifold is {a.shape}")
    w = matmul(filt.b, a)
    return np.sqrt(w.re * w.re + w.im * w.im)


def _ratio_db(p_sig: float, p_noise: float) -> float:
    if p_sig == 0.0:
        return -_SNR_CAP_DB
    if p_noise == 0.0:
        return _SNR_CAP_DB
    return float(np.clip(10.0 * math.log10(p_sig / p_noise), -_SNR_CAP_DB, _SNR_CAP_DB))


def output_snr_db(
    filt: SpatialFilter,
    a_active: ComplexMatrix,
    s: ComplexMatrix,
    n: ComplexMatrix,
) -> tuple[float, float]:
    """(input SNR, output SNR) in dB, each capped at +/-300 dB."""
    sig = matmul(a_active, s)
    snr_in = _ratio_db(frobenius(sig) ** 2, frobenius(n) ** 2)
    sig_out = matmul(filt.b, sig)
    noise_out = matmul(filt.b, n)
    snr_out = _ratio_db(frobenius(sig_out) ** 2, frobenius(noise_out) ** 2)
    return snr_in, snr_out
