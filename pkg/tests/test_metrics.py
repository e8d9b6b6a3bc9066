"""Metric exactness: wrap, RMSPE, align, micro-F1, K accuracy."""

import math

import numpy as np
import pytest

from doabeam.arraymodel import AngleGrid
from doabeam.beamform import Peak, SpatialSpectrum
from doabeam.errors import ShapeError, ValidationError
from doabeam.metrics import (
    EvalRecord,
    aggregate_rmspe,
    align,
    k_accuracy,
    labels_to_indicator,
    micro_f1,
    records_to_csv,
    rmspe,
    wrap,
)

GRID = AngleGrid(1.0)


def _spec(p):
    p = np.asarray(p, dtype=np.float64)
    grid = AngleGrid(180.0 / (len(p) - 1))
    return SpatialSpectrum(p=p, rho=np.tanh(p), grid=grid)


class TestWrap:
    def test_hand_value(self):
        assert wrap(3.10) == pytest.approx(-0.041593, abs=1e-6)

    def test_interval(self):
        xs = np.linspace(-10, 10, 2001)
        ys = wrap(xs)
        assert np.all(ys > -math.pi / 2) and np.all(ys <= math.pi / 2)

    def test_idempotent(self):
        xs = np.linspace(-10, 10, 101)
        np.testing.assert_allclose(wrap(wrap(xs)), wrap(xs), atol=1e-12)

    def test_half_pi_maps_to_half_pi(self):
        assert wrap(math.pi / 2) == pytest.approx(math.pi / 2)
        assert wrap(-math.pi / 2) == pytest.approx(math.pi / 2)


class TestRmspe:
    def test_permutation_exact_zero(self):
        assert rmspe([0.1, -0.2], [-0.2, 0.1]) == 0.0

    def test_scalar_error(self):
        assert rmspe([0.0], [0.1]) == pytest.approx(0.1, abs=1e-9)

    def test_wrap_hand_value(self):
        assert rmspe([1.55], [-1.55]) == pytest.approx(0.041593, abs=1e-6)

    def test_symmetry_and_permutation_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.uniform(-1.5, 1.5, 3)
            e = rng.uniform(-1.5, 1.5, 3)
            v = rmspe(t, e)
            assert v == pytest.approx(rmspe(e, t), abs=1e-12)
            assert v == pytest.approx(rmspe(t[::-1], e), abs=1e-12)
            assert rmspe(t, t) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError, match="align"):
            rmspe([0.1, 0.2], [0.1])

    def test_permutation_budget(self):
        with pytest.raises(ValidationError):
            rmspe(list(range(9)), list(range(9)))


class TestAlign:
    def test_truncates_by_energy(self):
        est = [Peak(0.1, 5.0, 10), Peak(0.2, 4.0, 20), Peak(0.3, 1.0, 30)]
        out = align(est, 2)
        np.testing.assert_array_equal(out, [0.1, 0.2])

    def test_identity_when_exact(self):
        est = [Peak(0.3, 1.0, 3), Peak(-0.2, 2.0, 1)]
        out = align(est, 2)
        np.testing.assert_array_equal(out, [-0.2, 0.3])

    def test_pads_from_spectrum(self):
        p = np.zeros(181)
        p[100], p[50] = 9.0, 7.0  # 10 deg and -40 deg grids
        spec = SpatialSpectrum(p=p, rho=np.tanh(p), grid=GRID)
        est = [Peak(float(GRID.thetas[100]), 9.0, 100)]
        out = align(est, 2, spec)
        assert out[0] == pytest.approx(math.radians(10.0))
        assert out[1] == pytest.approx(math.radians(-40.0))

    def test_empty_without_spectrum_errors(self):
        with pytest.raises(ValidationError):
            align([], 2)

    def test_empty_with_spectrum_pads_fully(self):
        p = np.zeros(181)
        p[30], p[160] = 3.0, 5.0
        spec = SpatialSpectrum(p=p, rho=np.tanh(p), grid=GRID)
        out = align([], 2, spec)
        assert out[0] == pytest.approx(float(GRID.thetas[160]))
        assert out[1] == pytest.approx(float(GRID.thetas[30]))


class TestMicroF1:
    def test_perfect(self):
        labels = labels_to_indicator([10, 20], 181)
        pred = labels.astype(float)
        assert micro_f1(pred, labels) == 1.0

    def test_counting_example(self):
        # predictions at 45 and 46 deg, truth only at 45 deg
        labels = labels_to_indicator([135], 181)
        pred = np.zeros(181)
        pred[135] = 0.9
        pred[136] = 0.8
        assert micro_f1(pred, labels) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_no_positives(self):
        labels = labels_to_indicator([5, 9], 181)
        assert micro_f1(np.zeros(181), labels) == 0.0

    def test_all_empty_is_one(self):
        assert micro_f1(np.zeros(10), np.zeros(10)) == 1.0

    def test_batch_aggregation(self):
        labels = np.zeros((2, 4))
        labels[0, 0] = 1
        labels[1, 1] = 1
        pred = np.zeros((2, 4))
        pred[0, 0] = 0.9  # TP
        pred[1, 2] = 0.9  # FP, and the row-1 truth is missed (FN)
        assert micro_f1(pred, labels) == pytest.approx(2.0 / 4.0)


def _rec(method="cbf", k_est=2, k_true=2, rmspe_rad=0.1):
    return EvalRecord(
        method=method,
        k_true=k_true,
        t=50,
        snr_db=10.0,
        rho_err=0.0,
        coherent=False,
        seed=0,
        rmspe_rad=rmspe_rad,
        k_est=k_est,
        f1=0.5,
    )


class TestRecords:
    def test_k_accuracy(self):
        recs = [_rec(k_est=2), _rec(k_est=1), _rec(k_est=2), _rec(k_est=3)]
        assert k_accuracy(recs) == 0.5
        assert k_accuracy([_rec()]) == 1.0
        with pytest.raises(ValidationError):
            k_accuracy([])

    def test_csv_shape(self):
        text = records_to_csv([_rec(), _rec(method="music")])
        lines = text.splitlines()
        assert lines[0] == "method,K,T,snr_db,rho_err,coherent,seed,rmspe_rad,k_est,k_true,f1"
        assert len(lines) == 3
        assert lines[1].startswith("cbf,2,50,10.0,0.0,0,0,0.1,2,2,0.5")
        assert text.endswith("\n") and "\r" not in text

    def test_aggregate_rmspe_is_rms(self):
        assert aggregate_rmspe([0.3, 0.4]) == pytest.approx(math.sqrt(0.125), abs=1e-12)
