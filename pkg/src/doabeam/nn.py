"""Neural building blocks on the tape engine: affine layers, a GRU cell,
bidirectional GRU sequences, the Adam optimizer, and checkpoint files.

Parameters live in a flat ordered dict[str, Tensor] keyed by dotted names
(e.g. "enc_a.fwd.w_z"); the helpers here take the dict plus a name prefix.
That flat naming is also the checkpoint layout, so save/restore is trivial.

Conventions (fixed, documented):
  - Batch-major activations: rows are samples, so an affine is x @ W + b
    with W of shape (in_dim, out_dim).
  - GRU update h_t = z*h_prev + (1-z)*h_tilde with
      z = sigmoid(x W_z + h U_z + b_z)
      r = sigmoid(x W_r + h U_r + b_r)
      h_tilde = tanh(x W_h + (r*h) U_h + b_h)
  - Initialization: each weight matrix is Uniform(-1/sqrt(fan_in),
    +1/sqrt(fan_in)) drawn row-major from a seeded Stream; biases are zero.
    Draw order within a GRU: w_z, u_z, w_r, u_r, w_h, u_h.
"""

from __future__ import annotations

import struct
import zlib
from typing import Iterable, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ChecksumError,
    FormatError,
    TruncatedError,
    ValidationError,
)
from .fileio import atomic_write_bytes
from .rng import Stream

# ---------------------------------------------------------------------------
# layers


def init_affine(
    params: dict, prefix: str, stream: Stream, in_dim: int, out_dim: int
) -> None:
    bound = 1.0 / np.sqrt(in_dim)
    w = np.array(stream.uniform(-bound, bound, in_dim * out_dim)).reshape(in_dim, out_dim)
    params[f"{prefix}.w"] = ad.param(w)
    params[f"{prefix}.b"] = ad.param(np.zeros(out_dim))


def affine(params: dict, prefix: str, x: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def init_gru(params: dict, prefix: str, stream: Stream, in_dim: int, hidden: int) -> None:
    w_bound = 1.0 / np.sqrt(in_dim)
    u_bound = 1.0 / np.sqrt(hidden)
    for gate in ("z", "r", "h"):
        w = stream.uniform(-w_bound, w_bound, in_dim * hidden)
        params[f"{prefix}.w_{gate}"] = ad.param(np.array(w).reshape(in_dim, hidden))
        u = stream.uniform(-u_bound, u_bound, hidden * hidden)
        params[f"{prefix}.u_{gate}"] = ad.param(np.array(u).reshape(hidden, hidden))
        params[f"{prefix}.b_{gate}"] = ad.param(np.zeros(hidden))


def gru_cell(params: dict, prefix: str, x_t: Tensor, h_prev: Tensor) -> Tensor:
    def gate(name: str, state: Tensor) -> Tensor:
        pre = ad.add(
            ad.add(
                ad.matmul(x_t, params[f"{prefix}.w_{name}"]),
                ad.matmul(state, params[f"{prefix}.u_{name}"]),
            ),
            params[f"{prefix}.b_{name}"],
        )
        return pre

    z = ad.sigmoid(gate("z", h_prev))
    r = ad.sigmoid(gate("r", h_prev))
    h_tilde = ad.tanh(gate("h", ad.mul(r, h_prev)))
    # z*h_prev + (1-z)*h_tilde, written as h_tilde + z*(h_prev - h_tilde)
    return ad.add(h_tilde, ad.mul(z, ad.sub(h_prev, h_tilde)))


def gru_sequence(
    params: dict, prefix: str, steps: list, hidden: int, reverse: bool = False
) -> list:
    """Run a GRU over a list of (batch, in_dim) step tensors; returns the
    per-step hidden states in the original step order."""
    if not steps:
        raise ValidationError("gru_sequence needs at least one step")
    batch = steps[0].shape[0]
    h = Tensor(np.zeros((batch, hidden)))
    outputs = []
    ordered = reversed(steps) if reverse else steps
    for x_t in ordered:
        h = gru_cell(params, prefix, x_t, h)
        outputs.append(h)
    if reverse:
        outputs.reverse()
    return outputs


def bigru_sequence(params: dict, prefix: str, steps: list, hidden: int) -> list:
    """Forward and backward GRU passes (prefixes "<prefix>.fwd"/"<prefix>.bwd");
    output at step t concatenates forward state t and backward state t."""
    fwd = gru_sequence(params, f"{prefix}.fwd", steps, hidden)
    bwd = gru_sequence(params, f"{prefix}.bwd", steps, hidden, reverse=True)
    return [ad.concat_cols([f, b]) for f, b in zip(fwd, bwd)]


def init_bigru(params: dict, prefix: str, stream: Stream, in_dim: int, hidden: int) -> None:
    init_gru(params, f"{prefix}.fwd", stream, in_dim, hidden)
    init_gru(params, f"{prefix}.bwd", stream, in_dim, hidden)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction; the update is -lr * m_hat / (sqrt(v_hat) + eps).

    State is kept per parameter name; parameters with no gradient (grad is
    None or all zero) keep their exact value on that step only if their
    moment state is still zero, which is the standard behavior.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or lr <= 0 or eps <= 0:
            raise ValidationError("adam: lr, eps > 0 and betas in [0, 1) required")
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"BFNC"
CKPT_VERSION = 1
_DTYPE_F64 = 0
_DTYPE_BYTES = 1  # raw byte payloads (structured-text sidecars), ndim fixed at 1


def checkpoint_bytes(entries: dict[str, Union[np.ndarray, Tensor, bytes]]) -> bytes:
    """Serialize named float64 arrays (and raw-byte sidecar entries) to the
    checkpoint wire format, in the dict's iteration order."""
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(entries))]
    for name, value in entries.items():
        encoded = name.encode("utf-8")
        if not 0 < len(encoded) < 2**16:
            raise ValidationError(f"checkpoint entry name {name!r} is empty or too long")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        if isinstance(value, (bytes, bytearray)):
            chunks.append(struct.pack("<BI", _DTYPE_BYTES, 1))
            chunks.append(struct.pack("<I", len(value)))
            chunks.append(bytes(value))
            continue
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f8")
        chunks.append(struct.pack("<BI", _DTYPE_F64, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_checkpoint(path, entries: dict[str, Union[np.ndarray, Tensor, bytes]]) -> None:
    atomic_write_bytes(path, checkpoint_bytes(entries))


def _need(buf: bytes, offset: int, count: int, what: str) -> int:
    end = offset + count
    if end > len(buf):
        raise TruncatedError(f"checkpoint ends inside {what} (offset {offset})")
    return end


def parse_checkpoint(buf: bytes) -> dict[str, Union[np.ndarray, bytes]]:
    if len(buf) < 4 or buf[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    off = _need(buf, 4, 8, "the header")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")

    # Structural walk first so truncation is reported as truncation, then the
    # checksum over everything before the trailing CRC, then the values.
    spans = []
    for _ in range(count):
        off = _need(buf, off, 2, "an entry name length")
        (name_len,) = struct.unpack_from("<H", buf, off - 2)
        name_end = _need(buf, off, name_len, "an entry name")
        name = buf[off:name_end].decode("utf-8")
        off = _need(buf, name_end, 5, "an entry descriptor")
        dtype, ndim = struct.unpack_from("<BI", buf, name_end)
        off = _need(buf, off, 4 * ndim, "entry dimensions")
        dims = struct.unpack_from(f"<{ndim}I", buf, off - 4 * ndim)
        if dtype == _DTYPE_F64:
            nbytes = 8 * int(np.prod(dims, dtype=np.int64)) if ndim else 8
        elif dtype == _DTYPE_BYTES:
            if ndim != 1:
                raise FormatError("byte entries must be one-dimensional")
            nbytes = dims[0]
        else:
            raise FormatError(f"unknown dtype code {dtype} for entry {name!r}")
        data_end = _need(buf, off, nbytes, f"data of entry {name!r}")
        spans.append((name, dtype, dims, off, data_end))
        off = data_end

    end = _need(buf, off, 4, "the trailing checksum")
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} unexpected trailing bytes")
    (stored,) = struct.unpack_from("<I", buf, off)
    if zlib.crc32(buf[:off]) & 0xFFFFFFFF != stored:
        raise ChecksumError("checkpoint checksum mismatch")

    out: dict[str, Union[np.ndarray, bytes]] = {}
    for name, dtype, dims, lo, hi in spans:
        if name in out:
            raise FormatError(f"duplicate entry name {name!r}")
        if dtype == _DTYPE_BYTES:
            out[name] = buf[lo:hi]
        else:
            out[name] = np.frombuffer(buf[lo:hi], dtype="<f8").reshape(dims).copy()
    return out


def read_checkpoint(path) -> dict[str, Union[np.ndarray, bytes]]:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def load_into(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    """Copy stored arrays into an existing parameter dict (shape-checked)."""
    missing = [k for k in params if k not in arrays]
    extra = [k for k in arrays if k not in params]
    if missing or extra:
        raise FormatError(
            f"parameter names do not line up (missing {missing[:3]}, extra {extra[:3]})"
        )
    for name, p in params.items():
        stored = arrays[name]
        if stored.shape != p.data.shape:
            raise FormatError(
                f"entry {name!r} has shape {stored.shape}, expected {p.data.shape}"
            )
        p.data = stored.astype(np.float64, copy=True)
        p.grad = None
