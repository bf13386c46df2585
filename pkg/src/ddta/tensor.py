"""Dense tensors with reverse-mode automatic differentiation.

The engine is a tape: every differentiable operation appends a node to a
``Tape`` in execution order, which is by construction a topological order.
``backward`` walks the tape once in reverse and accumulates exact gradients
into every tensor that requires them.

Scope is deliberately small: only the shapes and operations the CNN stack
and the attack loops need. No general broadcasting, no dynamic shapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

CROSS_ENTROPY_EPS = 1e-12


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(RuntimeError):
    """The computation graph was misused (bad seed, mutated tape, ...)."""


class Tensor:
    """A dense n-d float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Node:
    __slots__ = ("op", "inputs", "out", "backward_fn", "_out_array")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], out: Tensor,
                 backward_fn: Callable[[np.ndarray], None]):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self._out_array = out.data  # identity snapshot for mutation detection


class Tape:
    """Computation graph recorded in execution (= topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._node_of: dict[int, int] = {}  # id(out Tensor) -> node index

    def record(self, op: str, inputs: Sequence[Tensor], out: Tensor,
               backward_fn: Callable[[np.ndarray], None]) -> Tensor:
        out.requires_grad = any(t.requires_grad for t in inputs)
        self._node_of[id(out)] = len(self.nodes)
        self.nodes.append(Node(op, tuple(inputs), out, backward_fn))
        return out

    def __len__(self) -> int:
        return len(self.nodes)


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def backward(tape: Tape, seed: Tensor) -> None:
    """Reverse sweep from ``seed``: fills ``grad`` of every tensor that
    requires gradients and is reachable from the seed.

    The seed must be a scalar produced on this tape. Any previous gradients
    on the tape's tensors are cleared first, so repeated sweeps (one per
    output, as in Jacobian computations) stay independent.
    """
    idx = tape._node_of.get(id(seed))
    if idx is None:
        raise GraphError("seed tensor was not produced on this tape")
    if seed.size != 1:
        raise GraphError(f"seed must be scalar, got shape {seed.shape}")
    for node in tape.nodes:
        if node.out.data is not node._out_array or node.out.data.shape != node._out_array.shape:
            raise GraphError(f"graph mutated since forward at op '{node.op}'")
        node.out.grad = None
        for t in node.inputs:
            t.grad = None
    seed.grad = np.ones_like(seed.data)
    for node in reversed(tape.nodes[: idx + 1]):
        g = node.out.grad
        if g is None or not node.out.requires_grad:
            continue
        node.backward_fn(g)


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(tape: Tape, a: Tensor, b) -> Tensor:
    """Elementwise a + b. ``b`` may also be a bias vector matching a's last axis."""
    b = _as_tensor(b, dtype=a.dtype)
    if b.shape != a.shape and not _is_bias_like(a, b) and b.size != 1:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def back(g):
        _accum(a, g)
        _accum(b, _reduce_to(g, b.shape))

    return tape.record("add", (a, b), out, back)


def sub(tape: Tape, a: Tensor, b) -> Tensor:
    b = _as_tensor(b, dtype=a.dtype)
    if b.shape != a.shape and b.size != 1:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)

    def back(g):
        _accum(a, g)
        _accum(b, -_reduce_to(g, b.shape))

    return tape.record("sub", (a, b), out, back)


def mul(tape: Tape, a: Tensor, b) -> Tensor:
    """Elementwise product; either operand may be scalar."""
    b = _as_tensor(b, dtype=a.dtype)
    if b.shape != a.shape and b.size != 1 and a.size != 1:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def back(g):
        _accum(a, _reduce_to(g * b.data, a.shape))
        _accum(b, _reduce_to(g * a.data, b.shape))

    return tape.record("mul", (a, b), out, back)


def _is_bias_like(a: Tensor, b: Tensor) -> bool:
    return b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == () or shape == (1,):
        return g.sum().reshape(shape)
    # bias-style: collapse all leading axes
    return g.reshape(-1, shape[0]).sum(axis=0)


def relu(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def back(g):
        _accum(x, g * (x.data > 0))

    return tape.record("relu", (x,), out, back)


def tanh(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))

    def back(g):
        _accum(x, g * (1.0 - out.data * out.data))

    return tape.record("tanh", (x,), out, back)


def absolute(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data))

    def back(g):
        _accum(x, g * np.sign(x.data))

    return tape.record("abs", (x,), out, back)


def maximum_scalar(tape: Tape, x: Tensor, c: float) -> Tensor:
    """max(x, c) elementwise; the subgradient follows x wherever x >= c."""
    out = Tensor(np.maximum(x.data, c))

    def back(g):
        _accum(x, g * (x.data >= c))

    return tape.record("maximum_scalar", (x,), out, back)


def reshape(tape: Tape, x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def back(g):
        _accum(x, g.reshape(x.shape))

    return tape.record("reshape", (x,), out, back)


def sum_all(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))

    def back(g):
        _accum(x, np.broadcast_to(g, x.shape).astype(x.dtype, copy=True))

    return tape.record("sum", (x,), out, back)


def mean_all(tape: Tape, x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.asarray(x.data.mean(), dtype=x.dtype))

    def back(g):
        _accum(x, np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=True))

    return tape.record("mean", (x,), out, back)


def gather(tape: Tape, x: Tensor, indices) -> Tensor:
    """Pick flat (row-major) indices from x; returns a 1-d tensor."""
    idx = np.asarray(indices, dtype=np.intp).ravel()
    out = Tensor(x.data.ravel()[idx].copy())

    def back(g):
        if x.requires_grad:
            gx = np.zeros(x.size, dtype=x.dtype)
            np.add.at(gx, idx, g.ravel())
            _accum(x, gx.reshape(x.shape))

    return tape.record("gather", (x,), out, back)


def reduce_max(tape: Tape, x: Tensor) -> Tensor:
    """Maximum over all entries; ties route the gradient to the lowest flat index."""
    flat = x.data.ravel()
    k = int(np.argmax(flat))
    out = Tensor(np.asarray(flat[k], dtype=x.dtype))

    def back(g):
        if x.requires_grad:
            gx = np.zeros(x.size, dtype=x.dtype)
            gx[k] = g
            _accum(x, gx.reshape(x.shape))

    return tape.record("reduce_max", (x,), out, back)


# ---------------------------------------------------------------------------
# linear algebra and CNN layers


def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return tape.record("matmul", (a, b), out, back)


def conv2d(tape: Tape, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """2-d cross-correlation, valid padding, stride 1.

    x: (B, H, W, Cin), w: (KH, KW, Cin, Cout), b: (Cout,).
    Forward goes through an im2col matmul; the column matrix is kept for
    the weight gradient. The input gradient is accumulated tap by tap,
    which avoids building a second column matrix.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeMismatch(f"conv2d: input {x.shape} vs kernel {w.shape}")
    B, H, W, C = x.shape
    KH, KW, _, CO = w.shape
    if H < KH or W < KW:
        raise ShapeMismatch(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    OH, OW = H - KH + 1, W - KW + 1
    win = sliding_window_view(x.data, (KH, KW), axis=(1, 2))  # (B,OH,OW,C,KH,KW)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        B * OH * OW, KH * KW * C)
    out_flat = cols @ w.data.reshape(KH * KW * C, CO) + b.data
    out = Tensor(out_flat.reshape(B, OH, OW, CO))

    def back(g):
        gflat = g.reshape(B * OH * OW, CO)
        if w.requires_grad:
            _accum(w, (cols.T @ gflat).reshape(w.shape))
        if b.requires_grad:
            _accum(b, gflat.sum(axis=0))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for p in range(KH):
                for q in range(KW):
                    gx[:, p:p + OH, q:q + OW, :] += g @ w.data[p, q].T
            _accum(x, gx)

    return tape.record("conv2d", (x, w, b), out, back)


def maxpool2(tape: Tape, x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties pick the lowest in-window index."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"maxpool2: expected 4-d input, got {x.shape}")
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ShapeMismatch(f"maxpool2: spatial dims must be even, got {x.shape}")
    OH, OW = H // 2, W // 2
    windows = x.data.reshape(B, OH, 2, OW, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(
        B, OH, OW, C, 4)
    arg = windows.argmax(axis=-1)  # first max wins ties
    out = Tensor(np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0])

    def back(g):
        if x.requires_grad:
            gw = np.zeros((B, OH, OW, C, 4), dtype=x.dtype)
            np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
            gx = gw.reshape(B, OH, OW, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(
                B, H, W, C)
            _accum(x, gx)

    return tape.record("maxpool2", (x,), out, back)


# ---------------------------------------------------------------------------
# probability heads


def softmax_t(tape: Tape, z: Tensor, temperature: float) -> Tensor:
    """Temperature-scaled softmax over the last axis, max-subtracted for
    overflow safety. Rows sum to 1 within float tolerance."""
    if not np.isfinite(temperature) or temperature <= 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    if not np.all(np.isfinite(z.data)):
        raise ValueError("softmax input contains non-finite logits")
    scaled = z.data / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def back(g):
        if z.requires_grad:
            inner = (g * p).sum(axis=-1, keepdims=True)
            _accum(z, (p * (g - inner)) / temperature)

    return tape.record("softmax_t", (z,), out, back)


def cross_entropy_soft(tape: Tape, predicted: Tensor, target) -> Tensor:
    """-sum(target * log(predicted)) over the last axis.

    ``predicted`` is clamped to [1e-12, 1] before the log. A (N,) input
    yields a scalar; a (B, N) batch yields per-sample losses of shape (B,).
    """
    t = _as_tensor(target, dtype=predicted.dtype)
    if t.shape != predicted.shape:
        raise ShapeMismatch(
            f"cross_entropy_soft: predicted {predicted.shape} vs target {t.shape}")
    clamped = np.clip(predicted.data, CROSS_ENTROPY_EPS, 1.0)
    out = Tensor(-(t.data * np.log(clamped)).sum(axis=-1))

    def back(g):
        if predicted.requires_grad:
            inside = (predicted.data >= CROSS_ENTROPY_EPS) & (predicted.data <= 1.0)
            gp = -t.data / clamped * inside
            _accum(predicted, gp * np.expand_dims(g, -1))

    return tape.record("cross_entropy_soft", (predicted, t), out, back)


def dropout(tape: Tape, x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; draw order from ``rng`` is part of the training schedule."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(tape, x, Tensor(mask))
