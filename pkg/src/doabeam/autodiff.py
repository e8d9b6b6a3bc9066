"""Minimal reverse-mode automatic differentiation over float64 arrays.

Values are Tensors; operations record (inputs, output, backward rule) onto
the innermost active Tape. Backward walks the records in reverse creation
order exactly once, accumulating gradients additively, so fan-out just
works. Tapes are thread-local: construction and backward must stay on one
thread, but distinct tapes may run on distinct threads.

Only 1-D and 2-D shapes exist here; complex quantities live as separate
real planes (re^2 + im^2 replaces |z|^2). With no tape active the same ops
run as plain forward numpy, which is how validation passes stay cheap.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GradCheckError, ShapeError, ValidationError

LOG_CLAMP = 1e-12

_LOCAL = threading.local()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are 1-D or 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered op records; topological order equals creation order."""

    __slots__ = ("records",)

    def __init__(self):
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> bool:
        popped = _stack().pop()
        assert popped is self, "tape stack corrupted"
        return False


def _stack() -> list:
    if not hasattr(_LOCAL, "stack"):
        _LOCAL.stack = []
    return _LOCAL.stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(out_data, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.records.append((out, backward))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Seed d(loss)/d(loss) = 1 and run the tape once, newest record first."""
    if not loss.requires_grad:
        raise ValidationError("loss does not depend on any tracked parameter")
    loss.grad = np.ones_like(loss.data)
    for out, rule in reversed(tape.records):
        if out.grad is not None:
            rule(out.grad)


def zero_grads(params) -> None:
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> bool:
    """True when b is a 1-D row broadcast onto 2-D a; False for same-shape."""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    row = _binary_shapes(a, b, "add")

    def rule(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0) if row else g)

    return _make(a.data + b.data, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    row = _binary_shapes(a, b, "sub")

    def rule(g):
        _accum(a, g)
        _accum(b, -(g.sum(axis=0) if row else g))

    return _make(a.data - b.data, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    row = _binary_shapes(a, b, "mul")
    a_data, b_data = a.data, b.data

    def rule(g):
        _accum(a, g * b_data)
        gb = g * a_data
        _accum(b, gb.sum(axis=0) if row else gb)

    return _make(a_data * b_data, (a, b), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def rule(g):
        _accum(a, g @ b_data.T)
        _accum(b, a_data.T @ g)

    return _make(a_data @ b_data, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose needs a 2-D tensor")
    return _make(a.data.T.copy(), (a,), lambda g: _accum(a, g.T))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows of nothing")
    datas = [p.data if p.data.ndim == 2 else p.data[None, :] for p in parts]
    cols = datas[0].shape[1]
    if any(d.shape[1] != cols for d in datas):
        raise ShapeError("concat_rows: column widths differ")
    sizes = [d.shape[0] for d in datas]
    offsets = np.cumsum([0] + sizes)
    parts = list(parts)

    def rule(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            piece = g[lo:hi]
            _accum(p, piece if p.data.ndim == 2 else piece[0])

    return _make(np.vstack(datas), parts, rule)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols of nothing")
    if any(p.data.ndim != 2 for p in parts):
        raise ShapeError("concat_cols needs 2-D tensors")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError("concat_cols: row counts differ")
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)
    parts = list(parts)

    def rule(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return _make(np.hstack([p.data for p in parts]), parts, rule)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice_rows[{start}:{stop}] on shape {a.shape}")

    def rule(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            _accum(a, full)

    return _make(a.data[start:stop].copy(), (a,), rule)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols[{start}:{stop}] on shape {a.shape}")

    def rule(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            _accum(a, full)

    return _make(a.data[:, start:stop].copy(), (a,), rule)


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError("gather_rows needs a 2-D tensor and 1-D indices")
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= a.shape[0]:
        raise ShapeError("gather_rows: index out of range")

    def rule(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

    return _make(a.data[idx].copy(), (a,), rule)


def fold_steps_to_cols(a: Tensor, steps: int, batch: int) -> Tensor:
    """(steps*batch, feat) time-major rows -> (batch*feat, steps) columns.

    Row t*batch + b of the input becomes column t of the output's row block
    for sample b; used to turn per-step stacks into per-sample sequences.
    """
    if a.data.ndim != 2 or a.shape[0] != steps * batch:
        raise ShapeError(f"fold: shape {a.shape} is not ({steps}*{batch}, feat)")
    feat = a.shape[1]

    def rule(g):
        back = g.reshape(batch, feat, steps).transpose(2, 0, 1).reshape(steps * batch, feat)
        _accum(a, back)

    out = a.data.reshape(steps, batch, feat).transpose(1, 2, 0).reshape(batch * feat, steps)
    return _make(out.copy(), (a,), rule)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * (1.0 - out * out)))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: _accum(a, g * out * (1.0 - out)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * out))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: _accum(a, g * mask))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: _accum(a, 2.0 * g * a.data))


def log(a: Tensor) -> Tensor:
    """Natural log with the input clamped at LOG_CLAMP (gradient 0 below)."""
    clamped = np.maximum(a.data, LOG_CLAMP)
    mask = a.data > LOG_CLAMP
    return _make(np.log(clamped), (a,), lambda g: _accum(a, g * mask / clamped))


def shifted_hinge(a: Tensor, m: float) -> Tensor:
    """max(x - m, 0); the subgradient at the kink x = m is 0."""
    shifted = a.data - m
    mask = shifted > 0
    return _make(np.where(mask, shifted, 0.0), (a,), lambda g: _accum(a, g * mask))


def int_pow(a: Tensor, n: int) -> Tensor:
    if not isinstance(n, int) or n < 0:
        raise ValidationError("int_pow exponent must be a nonnegative int")
    if n == 0:
        return _make(np.ones_like(a.data), (a,), lambda g: None)
    deriv = n * a.data ** (n - 1)
    return _make(a.data**n, (a,), lambda g: _accum(a, g * deriv))


def scalar_scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: _accum(a, g * c))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data + c, (a,), lambda g: _accum(a, g))


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("softmax_rows needs a 2-D tensor")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        _accum(a, out * (g - (g * out).sum(axis=1, keepdims=True)))

    return _make(out, (a,), rule)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"mean_axis(axis={axis}) on shape {a.shape}")
    n = a.shape[axis]

    def rule(g):
        if axis == 0:
            _accum(a, np.broadcast_to(g / n, a.data.shape))
        else:
            _accum(a, np.repeat((g / n)[:, None], n, axis=1))

    return _make(a.data.mean(axis=axis), (a,), rule)


def total(a: Tensor) -> Tensor:
    """Sum of every entry, as a scalar tensor."""
    return _make(
        np.asarray(a.data.sum()), (a,), lambda g: _accum(a, np.full_like(a.data, float(g)))
    )


@dataclass
class GradCheckReport:
    max_rel_err: float
    checked: int
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def grad_check(
    closure: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-6,
    tol: float = 1e-6,
    atol: float = 1e-9,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward gradients against central finite differences.

    A coordinate fails when |numeric - analytic| exceeds atol + tol * scale
    with scale = max(|numeric|, |analytic|); the atol term absorbs the
    ~1e-10 noise floor of central differences near zero gradients. When the
    parameter count exceeds max_coords, a seeded subset is checked. The
    closure must be deterministic; it is run twice to verify that.
    """
    v0 = closure().item()
    if closure().item() != v0:
        raise GradCheckError("closure is not deterministic across repeated calls")

    zero_grads(params)
    with Tape() as tape:
        loss = closure()
        backward(loss, tape)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}
    zero_grads(params)

    coords = [(name, i) for name, p in params.items() for i in range(p.data.size)]
    if max_coords is not None and len(coords) > max_coords:
        picks = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
        coords = [coords[int(i)] for i in sorted(picks)]

    max_rel = 0.0
    failures = []
    for name, i in coords:
        flat = params[name].data.reshape(-1)
        keep = flat[i]
        flat[i] = keep + h
        f_plus = closure().item()
        flat[i] = keep - h
        f_minus = closure().item()
        flat[i] = keep
        numeric = (f_plus - f_minus) / (2.0 * h)
        ana = float(analytic[name].reshape(-1)[i])
        scale = max(abs(numeric), abs(ana))
        diff = abs(numeric - ana)
        rel = diff / max(scale, atol)
        max_rel = max(max_rel, rel)
        if diff > atol + tol * scale:
            failures.append((name, i, numeric, ana))
    return GradCheckReport(max_rel_err=max_rel, checked=len(coords), failures=failures)
