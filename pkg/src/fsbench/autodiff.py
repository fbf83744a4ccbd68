"""Dense float64 tensors with a recorded reverse-mode tape.

The engine is deliberately small: just the operations an embedding-based
click model and its learnable feature gates need. Shapes must match
exactly, with three documented exceptions: adding a 1-D bias to a matrix,
multiplying by a size-1 scalar, and multiplying a matrix by a single
column (both used by gate scaling).

A forward op executed inside a ``with Tape():`` block records a node;
``Tape.backward`` walks the node list once in reverse and accumulates
gradients into every tensor that requires them, then clears itself for
the next step. Outside a tape block the same ops run eagerly with no
recording, which is how evaluation passes stay cheap.

Set FSBENCH_CHECK_FINITE=1 to assert every op output is finite.
"""

from __future__ import annotations

import os
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, TapeError

_CHECK_FINITE = os.environ.get("FSBENCH_CHECK_FINITE", "0") not in ("", "0")

LOSS_CLAMP = 1e-7

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array plus the gradient slot the tape fills in."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def param(data, requires_grad: bool = True) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


class Tape:
    """Recorded computation graph; node order is topological by construction."""

    def __init__(self):
        # each node: (output tensor, parent tensors, backward fn g -> parent grads)
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.pop()

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        out.tape = self
        self.nodes.append((out, parents, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of ``loss`` into every requires-grad tensor.

        Visits each node exactly once, in reverse recording order, then
        clears the node list so the tape can serve the next step.
        """
        if loss.size != 1:
            raise TapeError("backward requires a scalar loss")
        if loss.tape is not self:
            raise TapeError("loss tensor was not produced on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, parents, backward in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            parent_grads = backward(g)
            for p, pg in zip(parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = pg
                else:
                    p.grad = p.grad + pg
        self.nodes.clear()


def _active_tape() -> "Tape | None":
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _finish(op: str, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise NumericError(f"{op}: non-finite values in output")
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward)
    return out


def _require_tensor(op: str, x) -> Tensor:
    if not isinstance(x, Tensor):
        raise DimensionError(f"{op}: expected a Tensor, got {type(x).__name__}")
    return x


# ---------------------------------------------------------------------------
# forward ops


def embed_lookup(table: Tensor, indices, row_scale: np.ndarray | None = None) -> Tensor:
    """Gather rows of a (V, d) table; optionally scale each row by a constant.

    ``row_scale`` is a per-row constant (V,) used for hard value masks;
    a zero scale removes the row from both the forward value and the
    gradient, exactly as if the parameter did not exist.
    """
    _require_tensor("embed_lookup", table)
    idx = np.asarray(indices)
    if table.data.ndim != 2:
        raise DimensionError("embed_lookup: table must be 2-D (vocab, dim)")
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError("embed_lookup: indices must be a 1-D integer array")
    vocab = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise DimensionError(f"embed_lookup: index out of range [0, {vocab})")
    rows = table.data[idx]
    if row_scale is not None:
        rows = rows * row_scale[idx][:, None]
    out = Tensor(rows)

    def backward(g):
        gt = np.zeros_like(table.data)
        gr = g if row_scale is None else g * row_scale[idx][:, None]
        np.add.at(gt, idx, gr)
        return (gt,)

    return _finish("embed_lookup", out, (table,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor("matmul", a)
    _require_tensor("matmul", b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        return (g @ b.data.T, a.data.T @ g)

    return _finish("matmul", out, (a, b), backward)


def _add_like(op: str, a: Tensor, b, sign: float) -> Tensor:
    _require_tensor(op, a)
    if isinstance(b, (int, float)):
        out = Tensor(a.data + sign * b)
        return _finish(op, out, (a,), lambda g: (g,))
    _require_tensor(op, b)
    if a.data.shape == b.data.shape:
        out = Tensor(a.data + sign * b.data)
        return _finish(op, out, (a, b), lambda g: (g, sign * g))
    # bias broadcast: (n, m) + (m,)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        out = Tensor(a.data + sign * b.data)
        return _finish(op, out, (a, b), lambda g: (g, sign * g.sum(axis=0)))
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b) -> Tensor:
    return _add_like("add", a, b, 1.0)


def sub(a: Tensor, b) -> Tensor:
    return _add_like("sub", a, b, -1.0)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; also accepts a python number, a size-1 scalar
    tensor, or a (n, 1) column against a (n, m) matrix."""
    _require_tensor("mul", a)
    if isinstance(b, (int, float)):
        k = float(b)
        out = Tensor(a.data * k)
        return _finish("mul", out, (a,), lambda g: (g * k,))
    _require_tensor("mul", b)
    if a.data.shape == b.data.shape:
        out = Tensor(a.data * b.data)
        return _finish("mul", out, (a, b), lambda g: (g * b.data, g * a.data))
    if b.size == 1:
        out = Tensor(a.data * b.data.reshape(()))

        def backward(g):
            return (g * b.data.reshape(()), np.sum(g * a.data).reshape(b.data.shape))

        return _finish("mul", out, (a, b), backward)
    if a.size == 1:
        return mul(b, a)
    if (
        a.data.ndim == 2
        and b.data.ndim == 2
        and b.data.shape == (a.data.shape[0], 1)
    ):
        out = Tensor(a.data * b.data)

        def backward(g):
            return (g * b.data, np.sum(g * a.data, axis=1, keepdims=True))

        return _finish("mul", out, (a, b), backward)
    if b.data.ndim == 2 and a.data.ndim == 2 and a.data.shape == (b.data.shape[0], 1):
        return mul(b, a)
    raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: need at least one tensor")
    for t in tensors:
        _require_tensor("concat", t)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _finish("concat", out, tuple(tensors), backward)


def col(t: Tensor, j: int) -> Tensor:
    """Single column (n, 1) of a 2-D tensor."""
    _require_tensor("col", t)
    if t.data.ndim != 2 or not (0 <= j < t.data.shape[1]):
        raise DimensionError(f"col: column {j} out of range for shape {t.shape}")
    out = Tensor(t.data[:, j : j + 1])

    def backward(g):
        gt = np.zeros_like(t.data)
        gt[:, j : j + 1] = g
        return (gt,)

    return _finish("col", out, (t,), backward)


def _reduce(op: str, t: Tensor, axis, keepdims: bool, mean_: bool) -> Tensor:
    _require_tensor(op, t)
    data = t.data
    if mean_:
        out_data = data.mean(axis=axis, keepdims=keepdims)
        count = data.size if axis is None else data.shape[axis]
    else:
        out_data = data.sum(axis=axis, keepdims=keepdims)
        count = 1
    out = Tensor(out_data)

    def backward(g):
        if axis is None:
            gg = np.broadcast_to(g, data.shape)
        else:
            gg = np.expand_dims(g, axis) if not keepdims else g
            gg = np.broadcast_to(gg, data.shape)
        return ((gg / count if mean_ else gg).copy(),)

    return _finish(op, out, (t,), backward)


def sum(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return _reduce("sum", t, axis, keepdims, mean_=False)


def mean(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return _reduce("mean", t, axis, keepdims, mean_=True)


def relu(t: Tensor) -> Tensor:
    _require_tensor("relu", t)
    mask = t.data > 0
    out = Tensor(np.where(mask, t.data, 0.0))
    return _finish("relu", out, (t,), lambda g: (g * mask,))


def sigmoid(t: Tensor) -> Tensor:
    _require_tensor("sigmoid", t)
    x = t.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s)
    return _finish("sigmoid", out, (t,), lambda g: (g * s * (1.0 - s),))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    _require_tensor("softmax", t)
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def backward(g):
        dot = np.sum(g * s, axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _finish("softmax", out, (t,), backward)


def smooth_l0_gate(theta: Tensor, eps: float) -> Tensor:
    """g = theta^2 / (theta^2 + eps): even in theta, 0 at 0, -> 1 as eps -> 0."""
    _require_tensor("smooth_l0_gate", theta)
    if eps <= 0:
        raise DimensionError("smooth_l0_gate: eps must be positive")
    q = theta.data * theta.data
    gval = q / (q + eps)
    out = Tensor(gval)

    def backward(g):
        return (g * 2.0 * theta.data * eps / (q + eps) ** 2,)

    return _finish("smooth_l0_gate", out, (theta,), backward)


def detach(t: Tensor) -> Tensor:
    """Same values, no parents: gradients stop here."""
    _require_tensor("detach", t)
    return Tensor(t.data.copy())


def bce_loss(p: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of probabilities against {0,1} labels.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the log, so the
    loss is finite for any p in [0, 1]; the clamp has zero gradient
    outside the open interval.
    """
    _require_tensor("bce_loss", p)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    flat = p.data.reshape(-1)
    if flat.shape != y.shape:
        raise DimensionError(
            f"bce_loss: {flat.shape[0]} predictions vs {y.shape[0]} labels"
        )
    lo, hi = LOSS_CLAMP, 1.0 - LOSS_CLAMP
    pc = np.clip(flat, lo, hi)
    losses = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    out = Tensor(losses.mean())
    n = y.shape[0]

    def backward(g):
        inside = (flat > lo) & (flat < hi)
        dp = (pc - y) / (pc * (1.0 - pc)) / n
        return ((float(g) * dp * inside).reshape(p.data.shape),)

    return _finish("bce_loss", out, (p,), backward)
