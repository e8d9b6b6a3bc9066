"""Complex linear algebra kernels: contracts, oracles, and properties."""

import numpy as np
import pytest

from doabeam.complexlin import (
    ComplexMatrix,
    frobenius,
    hermitian_eig,
    lstsq,
    matmul,
)
from doabeam.errors import NotHermitianError, ShapeError, ValidationError


def _rand_cm(rng, rows, cols):
    return ComplexMatrix.from_complex(
        rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    )


def _naive_matmul(a, b):
    """Element-by-element triple loop, the independent reference."""
    out = np.zeros((a.shape[0], b.shape[1]), dtype=complex)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestComplexMatrix:
    def test_plane_shapes_must_agree(self):
        with pytest.raises(ShapeError):
            ComplexMatrix(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_rejects_non_finite(self):
        bad = np.array([[np.nan, 0.0]])
        with pytest.raises(ValidationError):
            ComplexMatrix(bad, np.zeros((1, 2)))

    def test_immutable(self):
        m = ComplexMatrix.identity(2)
        with pytest.raises((AttributeError, ValueError)):
            m.re[0, 0] = 5.0

    def test_round_trip_planes(self):
        z = np.array([[1 + 2j, 3 - 4j]])
        m = ComplexMatrix.from_complex(z)
        assert m.rows == 1 and m.cols == 2
        np.testing.assert_array_equal(m.to_complex(), z)

    def test_conj_t(self):
        z = np.array([[1 + 2j, 3j]])
        np.testing.assert_array_equal(
            ComplexMatrix.from_complex(z).conj_t().to_complex(), z.conj().T
        )


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        m = _rand_cm(rng, 2, 2)
        out = matmul(ComplexMatrix.identity(2), m)
        np.testing.assert_allclose(out.to_complex(), m.to_complex(), atol=1e-15)

    def test_j_squared(self):
        j = ComplexMatrix.from_complex(np.array([[1j]]))
        assert matmul(j, j).to_complex()[0, 0] == pytest.approx(-1.0)

    def test_against_triple_loop(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        got = matmul(ComplexMatrix.from_complex(a), ComplexMatrix.from_complex(b))
        assert np.max(np.abs(got.to_complex() - _naive_matmul(a, b))) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        a, b = ComplexMatrix.zeros(2, 3), ComplexMatrix.zeros(2, 3)
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(a, b)

    def test_associativity(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            a, b, c = _rand_cm(rng, 3, 4), _rand_cm(rng, 4, 5), _rand_cm(rng, 5, 2)
            left = matmul(matmul(a, b), c).to_complex()
            right = matmul(a, matmul(b, c)).to_complex()
            np.testing.assert_allclose(left, right, rtol=1e-10)

    def test_conj_t_of_product(self):
        rng = np.random.default_rng(13)
        a, b = _rand_cm(rng, 3, 4), _rand_cm(rng, 4, 2)
        lhs = matmul(a, b).conj_t().to_complex()
        rhs = matmul(b.conj_t(), a.conj_t()).to_complex()
        assert np.max(np.abs(lhs - rhs)) < 1e-12


class TestHermitianEig:
    def test_diagonal(self):
        w, _ = hermitian_eig(ComplexMatrix.from_complex(np.diag([2.0, 1.0])))
        np.testing.assert_allclose(w, [2.0, 1.0])

    def test_2x2_hand_solution(self):
        # [[0, -j], [j, 0]] has characteristic polynomial l^2 - 1 = 0
        h = ComplexMatrix.from_complex(np.array([[0, -1j], [1j, 0]]))
        w, v = hermitian_eig(h)
        np.testing.assert_allclose(w, [1.0, -1.0], atol=1e-12)
        hz, vz = h.to_complex(), v.to_complex()
        for k in range(2):
            np.testing.assert_allclose(hz @ vz[:, k], w[k] * vz[:, k], atol=1e-12)

    def test_construct_then_recover(self):
        # Orthonormal Q from seeded Gram-Schmidt, assemble Q diag(lam) Q^H,
        # then require the known spectrum back.
        rng = np.random.default_rng(3)
        z = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        q = np.zeros_like(z)
        for k in range(6):
            v = z[:, k].copy()
            for p in range(k):
                v -= (q[:, p].conj() @ v) * q[:, p]
            q[:, k] = v / np.linalg.norm(v)
        lam = np.array([5.0, 3.5, 1.0, 0.25, -0.5, -2.0])
        h = ComplexMatrix.from_complex(q @ np.diag(lam) @ q.conj().T)
        w, v = hermitian_eig(h)
        np.testing.assert_allclose(w, lam, atol=1e-8)
        res = h.to_complex() @ v.to_complex() - v.to_complex() * w
        assert np.linalg.norm(res) < 1e-8 * frobenius(h)

    def test_eigenvectors_orthonormal(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        h = ComplexMatrix.from_complex(z + z.conj().T)
        _, v = hermitian_eig(h)
        gram = v.conj_t().to_complex() @ v.to_complex()
        assert np.max(np.abs(gram - np.eye(8))) < 1e-8

    def test_descending_order_and_trace(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            z = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
            h = ComplexMatrix.from_complex(z + z.conj().T)
            w, _ = hermitian_eig(h)
            assert np.all(np.diff(w) <= 0)
            trace = np.trace(h.to_complex()).real
            np.testing.assert_allclose(w.sum(), trace, rtol=1e-9)

    def test_determinant_3x3_analytic(self):
        h = ComplexMatrix.from_complex(
            np.array([[2.0, 1j, 0], [-1j, 3.0, 1.0], [0, 1.0, 1.0]])
        )
        w, _ = hermitian_eig(h)
        det = np.linalg.det(h.to_complex()).real
        np.testing.assert_allclose(np.prod(w), det, rtol=1e-9)

    def test_rejects_non_hermitian(self):
        with pytest.raises(NotHermitianError):
            hermitian_eig(ComplexMatrix.from_complex(np.array([[0, 1.0], [0, 0]])))

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            hermitian_eig(ComplexMatrix.zeros(2, 3))


class TestLstsq:
    def test_identity_system(self):
        rng = np.random.default_rng(1)
        y = _rand_cm(rng, 3, 2)
        x, res = lstsq(ComplexMatrix.identity(3), y)
        np.testing.assert_allclose(x.to_complex(), y.to_complex(), atol=1e-14)
        assert res < 1e-12

    def test_overdetermined_consistent(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
        x_true = rng.standard_normal((2, 1)) + 1j * rng.standard_normal((2, 1))
        a2 = np.vstack([a, a])
        y2 = a2 @ x_true
        x, res = lstsq(ComplexMatrix.from_complex(a2), ComplexMatrix.from_complex(y2))
        np.testing.assert_allclose(x.to_complex(), x_true, atol=1e-10)
        assert res < 1e-10

    def test_underdetermined_min_norm(self):
        # Independent route: pseudo-inverse assembled from hermitian_eig of
        # a a^H (full row rank, so pinv = a^H (a a^H)^{-1}).
        rng = np.random.default_rng(4)
        a = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        y = rng.standard_normal((2, 1)) + 1j * rng.standard_normal((2, 1))
        x, _ = lstsq(ComplexMatrix.from_complex(a), ComplexMatrix.from_complex(y))
        assert np.max(np.abs(a @ x.to_complex() - y)) < 1e-10
        w, v = hermitian_eig(ComplexMatrix.from_complex(a @ a.conj().T))
        vz = v.to_complex()
        pinv = a.conj().T @ (vz @ np.diag(1.0 / w) @ vz.conj().T)
        x_min = pinv @ y
        np.testing.assert_allclose(x.to_complex(), x_min, atol=1e-10)
        # Any feasible perturbation in the null space only grows the norm.
        base = np.linalg.norm(x.to_complex())
        null = np.eye(4) - pinv @ a
        for k in range(4):
            cand = x.to_complex() + null[:, k : k + 1]
            if np.max(np.abs(a @ cand - y)) < 1e-8:
                assert np.linalg.norm(cand) >= base - 1e-10

    def test_residual_beats_zero_solution(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            a, y = _rand_cm(rng, 5, 3), _rand_cm(rng, 5, 2)
            _, res = lstsq(a, y)
            assert res <= frobenius(y) + 1e-12

    def test_row_mismatch(self):
        with pytest.raises(ShapeError):
            lstsq(ComplexMatrix.zeros(3, 2), ComplexMatrix.zeros(4, 1))
