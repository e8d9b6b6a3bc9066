"""Tests for the GRU/BiGRU layers, Adam, and checkpoint files.

Oracles: an independent numpy GRU forward implemented in this file, central
finite differences for sequence gradients, a hand-rolled Adam reference,
and hand-computed single-step values.
"""

import struct
import zlib

import numpy as np
import pytest

from doabeam import autodiff as ad
from doabeam import nn
from doabeam.errors import (
    ChecksumError,
    FormatError,
    ShapeError,
    TruncatedError,
    ValidationError,
)
from doabeam.rng import Stream


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_forward_reference(p, prefix, xs, hidden):
    """Independent numpy GRU forward (same update convention)."""
    h = np.zeros((xs[0].shape[0], hidden))
    out = []
    for x in xs:
        z = sigmoid(x @ p[f"{prefix}.w_z"].data + h @ p[f"{prefix}.u_z"].data + p[f"{prefix}.b_z"].data)
        r = sigmoid(x @ p[f"{prefix}.w_r"].data + h @ p[f"{prefix}.u_r"].data + p[f"{prefix}.b_r"].data)
        cand = np.tanh(
            x @ p[f"{prefix}.w_h"].data + (r * h) @ p[f"{prefix}.u_h"].data + p[f"{prefix}.b_h"].data
        )
        h = z * h + (1.0 - z) * cand
        out.append(h)
    return out


def make_gru(prefix, seed, in_dim, hidden):
    params = {}
    nn.init_gru(params, prefix, Stream(seed), in_dim, hidden)
    return params


class TestGRU:
    def test_zero_params_zero_state(self):
        params = make_gru("g", 1, 3, 4)
        for p in params.values():
            p.data[:] = 0.0
        steps = [ad.Tensor(np.random.default_rng(i).normal(size=(2, 3))) for i in range(3)]
        outs = nn.gru_sequence(params, "g", steps, 4)
        for h in outs:
            assert np.all(h.data == 0.0)

    def test_large_update_bias_carries_state(self):
        params = make_gru("g", 2, 3, 4)
        params["g.b_z"].data[:] = 50.0  # z saturates to 1, h_t = h_prev
        x = ad.Tensor(np.zeros((2, 3)))
        h0 = ad.Tensor(np.random.default_rng(0).normal(size=(2, 4)))
        h1 = nn.gru_cell(params, "g", x, h0)
        assert np.allclose(h1.data, h0.data, atol=1e-12)

    def test_matches_independent_forward(self):
        params = make_gru("g", 3, 5, 6)
        xs = [np.random.default_rng(10 + t).normal(size=(3, 5)) for t in range(4)]
        got = nn.gru_sequence(params, "g", [ad.Tensor(x) for x in xs], 6)
        want = gru_forward_reference(params, "g", xs, 6)
        for g, w in zip(got, want):
            assert np.allclose(g.data, w, atol=1e-13)

    def test_three_step_gradient_matches_fd(self):
        params = make_gru("g", 4, 3, 4)
        xs = [ad.Tensor(np.random.default_rng(20 + t).normal(size=(2, 3))) for t in range(3)]

        def loss():
            outs = nn.gru_sequence(params, "g", xs, 4)
            return ad.total(ad.square(ad.concat_rows(outs)))

        report = ad.grad_check(loss, params, tol=1e-5)
        assert report.passed, report.failures[:3]

    def test_width_mismatch_raises(self):
        params = make_gru("g", 5, 3, 4)
        bad = ad.Tensor(np.zeros((2, 5)))
        with pytest.raises(ShapeError):
            nn.gru_cell(params, "g", bad, ad.Tensor(np.zeros((2, 4))))

    def test_empty_sequence_rejected(self):
        params = make_gru("g", 6, 3, 4)
        with pytest.raises(ValidationError):
            nn.gru_sequence(params, "g", [], 4)


class TestBiGRU:
    def test_concat_of_directional_runs(self):
        params = {}
        nn.init_bigru(params, "bg", Stream(7), 3, 4)
        xs = [np.random.default_rng(30 + t).normal(size=(2, 3)) for t in range(5)]
        steps = [ad.Tensor(x) for x in xs]
        outs = nn.bigru_sequence(params, "bg", steps, 4)
        assert all(o.shape == (2, 8) for o in outs)
        fwd = gru_forward_reference(params, "bg.fwd", xs, 4)
        bwd = gru_forward_reference(params, "bg.bwd", xs[::-1], 4)[::-1]
        for t in range(5):
            assert np.allclose(outs[t].data[:, :4], fwd[t], atol=1e-13)
            assert np.allclose(outs[t].data[:, 4:], bwd[t], atol=1e-13)

    def test_gradient_matches_fd(self):
        params = {}
        nn.init_bigru(params, "bg", Stream(8), 2, 3)
        xs = [ad.Tensor(np.random.default_rng(40 + t).normal(size=(2, 2))) for t in range(3)]

        def loss():
            outs = nn.bigru_sequence(params, "bg", xs, 3)
            return ad.total(ad.square(ad.concat_rows(outs)))

        report = ad.grad_check(loss, params, tol=1e-5, max_coords=60, seed=1)
        assert report.passed, report.failures[:3]


class TestInit:
    def test_bounds_and_zero_biases(self):
        params = make_gru("g", 9, 5, 8)
        for name, p in params.items():
            if ".b_" in name:
                assert np.all(p.data == 0.0)
            elif ".w_" in name:
                assert np.max(np.abs(p.data)) <= 1.0 / np.sqrt(5)
                assert p.data.shape == (5, 8)
            else:
                assert np.max(np.abs(p.data)) <= 1.0 / np.sqrt(8)
                assert p.data.shape == (8, 8)

    def test_deterministic(self):
        a = make_gru("g", 11, 4, 4)
        b = make_gru("g", 11, 4, 4)
        for name in a:
            assert np.array_equal(a[name].data, b[name].data)

    def test_affine_init_and_apply(self):
        params = {}
        nn.init_affine(params, "lin", Stream(12), 6, 3)
        assert params["lin.w"].shape == (6, 3)
        assert np.max(np.abs(params["lin.w"].data)) <= 1.0 / np.sqrt(6)
        assert np.all(params["lin.b"].data == 0.0)
        x = np.random.default_rng(0).normal(size=(4, 6))
        got = nn.affine(params, "lin", ad.Tensor(x))
        assert np.allclose(got.data, x @ params["lin.w"].data, atol=1e-15)


class TestAdam:
    def test_first_step_hand_value(self):
        p = ad.param(np.array([0.0]))
        opt = nn.Adam({"p": p}, lr=0.1)
        p.grad = np.array([1.0])
        opt.step()
        # m_hat = v_hat = 1 after bias correction: update = -0.1 / (1 + 1e-8)
        assert p.data[0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-15)

    def test_zero_gradient_keeps_params(self):
        p = ad.param(np.array([1.25, -2.5]))
        before = p.data.copy()
        opt = nn.Adam({"p": p})
        p.grad = np.zeros(2)
        opt.step()
        opt.step()
        assert np.array_equal(p.data, before)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(3, 2))
        grads = [rng.normal(size=(3, 2)) for _ in range(4)]

        p = ad.param(data.copy())
        opt = nn.Adam({"p": p}, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
        for g in grads:
            p.grad = g.copy()
            opt.step()

        ref = data.copy()
        m = np.zeros_like(ref)
        v = np.zeros_like(ref)
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1 - 0.9**t)
            v_hat = v / (1 - 0.999**t)
            ref -= 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert np.allclose(p.data, ref, atol=1e-16)

    def test_state_is_per_parameter(self):
        init_a = np.array([1.0, 2.0])
        init_b = np.array([[3.0], [4.0]])
        ga, gb = np.array([0.5, -0.5]), np.array([[1.5], [-0.25]])

        def run(order):
            a, b = ad.param(init_a.copy()), ad.param(init_b.copy())
            named = {"a": a, "b": b}
            opt = nn.Adam({k: named[k] for k in order}, lr=0.05)
            for _ in range(3):
                a.grad, b.grad = ga.copy(), gb.copy()
                opt.step()
            return a.data.copy(), b.data.copy()

        a1, b1 = run(("a", "b"))
        a2, b2 = run(("b", "a"))
        assert np.array_equal(a1, a2) and np.array_equal(b1, b2)

    def test_missing_grad_treated_as_zero(self):
        p = ad.param(np.array([7.0]))
        opt = nn.Adam({"p": p})
        p.grad = None
        opt.step()
        assert p.data[0] == 7.0


class TestCheckpoint:
    def entries(self):
        return {
            "layer.w": np.arange(6.0).reshape(2, 3),
            "layer.b": np.array([0.5, -0.5, 0.25]),
            "scalarish": np.array([3.14159]),
            "__sidecar__": b'{"E": 32}',
        }

    def test_round_trip(self, tmp_path):
        path = tmp_path / "model.ckpt"
        nn.write_checkpoint(path, self.entries())
        back = nn.read_checkpoint(path)
        want = self.entries()
        assert list(back) == list(want)
        for name, value in want.items():
            if isinstance(value, bytes):
                assert back[name] == value
            else:
                assert np.array_equal(back[name], value)
                assert back[name].dtype == np.float64

    def test_serialization_is_stable(self):
        assert nn.checkpoint_bytes(self.entries()) == nn.checkpoint_bytes(self.entries())

    def test_tensor_values_accepted(self, tmp_path):
        path = tmp_path / "t.ckpt"
        nn.write_checkpoint(path, {"p": ad.param(np.ones((2, 2)))})
        assert np.array_equal(nn.read_checkpoint(path)["p"], np.ones((2, 2)))

    def test_bad_magic(self):
        buf = nn.checkpoint_bytes(self.entries())
        with pytest.raises(FormatError):
            nn.parse_checkpoint(b"XXXX" + buf[4:])

    def test_bad_version(self):
        buf = bytearray(nn.checkpoint_bytes(self.entries()))
        buf[4:8] = struct.pack("<I", 9)
        with pytest.raises(FormatError):
            nn.parse_checkpoint(bytes(buf))

    def test_truncation(self):
        buf = nn.checkpoint_bytes(self.entries())
        with pytest.raises(TruncatedError):
            nn.parse_checkpoint(buf[:10])
        with pytest.raises(TruncatedError):
            nn.parse_checkpoint(buf[:-30])

    def test_corruption(self):
        buf = bytearray(nn.checkpoint_bytes(self.entries()))
        # flip a byte inside the first entry's float payload (structure intact)
        first_data = 4 + 8 + 2 + len("layer.w") + 5 + 8
        buf[first_data + 3] ^= 0xFF
        with pytest.raises(ChecksumError):
            nn.parse_checkpoint(bytes(buf))

    def test_trailing_bytes_rejected(self):
        buf = nn.checkpoint_bytes(self.entries())
        with pytest.raises(FormatError):
            nn.parse_checkpoint(buf + b"\x00")

    def test_unknown_dtype_rejected(self):
        body = nn.CKPT_MAGIC + struct.pack("<II", nn.CKPT_VERSION, 1)
        body += struct.pack("<H", 1) + b"q"
        body += struct.pack("<BI", 7, 1) + struct.pack("<I", 0)
        buf = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
        with pytest.raises(FormatError):
            nn.parse_checkpoint(buf)

    def test_load_into(self):
        params = {"a": ad.param(np.zeros((2, 2))), "b": ad.param(np.zeros(3))}
        params["a"].grad = np.ones((2, 2))
        stored = {"a": np.full((2, 2), 2.0), "b": np.array([1.0, 2.0, 3.0])}
        nn.load_into(params, stored)
        assert np.array_equal(params["a"].data, stored["a"])
        assert params["a"].grad is None

    def test_load_into_shape_mismatch(self):
        params = {"a": ad.param(np.zeros((2, 2)))}
        with pytest.raises(FormatError):
            nn.load_into(params, {"a": np.zeros(4)})

    def test_load_into_name_mismatch(self):
        params = {"a": ad.param(np.zeros(2))}
        with pytest.raises(FormatError):
            nn.load_into(params, {"a": np.zeros(2), "zz": np.zeros(1)})
        with pytest.raises(FormatError):
            nn.load_into({"a": ad.param(np.zeros(2)), "c": ad.param(np.zeros(1))}, {"a": np.zeros(2)})
