"""Complex dense linear algebra kernels.

A ComplexMatrix stores paired real/imaginary float64 planes. Kernels are
backed by numpy/LAPACK; every exported operation validates shapes and
finiteness so downstream modules can assume clean values. All math is
float64: sizes here are small (M <= 256) and precision keeps gradient and
residual checks tight.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ConvergenceError,
    NotHermitianError,
    ShapeError,
    ValidationError,
)

HERMITIAN_TOL = 1e-9


class ComplexMatrix:
    """Immutable 2-D complex matrix as paired re/im float64 planes."""

    __slots__ = ("re", "im")

    def __init__(self, re: np.ndarray, im: np.ndarray):
        re = np.ascontiguousarray(re, dtype=np.float64)
        im = np.ascontiguousarray(im, dtype=np.float64)
        if re.ndim != 2 or im.ndim != 2:
            raise ShapeError(f"planes must be 2-D, got {re.shape} and {im.shape}")
        if re.shape != im.shape:
            raise ShapeError(f"plane shapes differ: {re.shape} vs {im.shape}")
        if not (np.isfinite(re).all() and np.isfinite(im).all()):
            raise ValidationError("non-finite entries in complex matrix")
        re.setflags(write=False)
        im.setflags(write=False)
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    def __setattr__(self, name, value):
        raise AttributeError("ComplexMatrix is immutable")

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexMatrix":
        z = np.asarray(z)
        if z.ndim == 1:
            z = z[:, None]
        return cls(z.real, z.imag)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "ComplexMatrix":
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "ComplexMatrix":
        return cls(np.eye(n), np.zeros((n, n)))

    @property
    def rows(self) -> int:
        return self.re.shape[0]

    @property
    def cols(self) -> int:
        return self.re.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def conj_t(self) -> "ComplexMatrix":
        """Hermitian (conjugate) transpose."""
        return ComplexMatrix(self.re.T, -self.im.T)

    def t(self) -> "ComplexMatrix":
        """Plain (non-conjugating) transpose."""
        return ComplexMatrix(self.re.T, self.im.T)

    def col(self, i: int) -> "ComplexMatrix":
        return ComplexMatrix(self.re[:, i : i + 1], self.im[:, i : i + 1])

    def __repr__(self) -> str:
        return f"ComplexMatrix({self.rows}x{self.cols})"


def matmul(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Complex matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return ComplexMatrix.from_complex(a.to_complex() @ b.to_complex())


def frobenius(a: ComplexMatrix) -> float:
    """Frobenius norm."""
    return float(np.sqrt(np.sum(a.re * a.re) + np.sum(a.im * a.im)))


def hermitian_eig(h: ComplexMatrix) -> tuple[np.ndarray, ComplexMatrix]:
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues descending, eigenvector columns). The input must be
    square and Hermitian within ``HERMITIAN_TOL`` (max-abs of H - H^H); it is
    symmetrized before factorization so the decomposition is well defined at
    the tolerance boundary.
    """
    if h.rows != h.cols:
        raise ShapeError(f"hermitian_eig needs a square matrix, got {h.shape}")
    z = h.to_complex()
    dev = np.max(np.abs(z - z.conj().T)) if h.rows else 0.0
    if dev > HERMITIAN_TOL:
        raise NotHermitianError(f"matrix deviates from Hermitian by {dev:.3e}")
    zs = 0.5 * (z + z.conj().T)
    try:
        w, v = np.linalg.eigh(zs)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(w)[::-1]
    return w[order].astype(np.float64), ComplexMatrix.from_complex(v[:, order])


def lstsq(a: ComplexMatrix, y: ComplexMatrix) -> tuple[ComplexMatrix, float]:
    """Minimum-norm least-squares solution of a @ x = y.

    Returns (x, residual) with residual = ||a @ x - y||_F. Rank-deficient and
    underdetermined systems get the minimum-norm solution.
    """
    if a.rows != y.rows:
        raise ShapeError(f"lstsq row mismatch: a is {a.shape}, y is {y.shape}")
    az, yz = a.to_complex(), y.to_complex()
    x, _, _, _ = np.linalg.lstsq(az, yz, rcond=None)
    res = float(np.linalg.norm(az @ x - yz, "fro"))
    return ComplexMatrix.from_complex(x), res
