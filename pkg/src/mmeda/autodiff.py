"""Reverse-mode automatic differentiation over dense float64 arrays.

Values are plain ``numpy.ndarray`` objects (float64, C order). A :class:`Node`
wraps a value, its gradient and the closure that pushes the gradient to its
parents. The graph is rebuilt on every forward pass; :func:`backward` orders
it topologically and runs the closures in reverse.

Gradient contract: intermediate gradients are reset at the start of every
:func:`backward` call, leaf gradients accumulate until :func:`zero_grad`.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "Node",
    "Tape",
    "tensor",
    "constant",
    "parameter",
    "backward",
    "zero_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "sum_all",
    "mean_all",
    "relu",
    "sigmoid",
    "identity",
    "activation",
    "transpose2d",
    "concat",
    "slice_rows",
    "slice_cols",
    "take_rows",
    "reshape",
    "conv2d",
    "maxpool2d",
    "upsample_nearest",
    "mse_loss",
    "cross_entropy",
    "softmax",
]

_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


def tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Make a float64 row-major array, optionally reshaped to ``shape``."""
    arr = np.array(data, dtype=np.float64, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} elements as shape {shape}")
        arr = arr.reshape(shape)
    return arr


class Node:
    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "id", "_backward")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Node", ...] = (),
        op: str = "leaf",
        requires_grad: bool = False,
        backward_fn: Callable[[np.ndarray], None] | None = None,
    ):
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self._backward = backward_fn
        tape = Tape.active
        if tape is not None:
            tape.nodes.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)

    def __add__(self, other) -> "Node":
        return add(self, _as_node(other))

    def __radd__(self, other) -> "Node":
        return add(_as_node(other), self)

    def __sub__(self, other) -> "Node":
        return sub(self, _as_node(other))

    def __mul__(self, other) -> "Node":
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_node(other))

    __rmul__ = __mul__

    @property
    def T(self) -> "Node":
        return transpose2d(self)


class Tape:
    """Ordered record of nodes; creation order is a topological order.

    Use as a context manager to record every node created inside the block.
    :meth:`from_loss` reconstructs the same ordering for the subgraph that
    feeds a given node, which is what :func:`backward` uses.
    """

    active: "Tape | None" = None

    def __init__(self, nodes: list[Node] | None = None):
        self.nodes: list[Node] = list(nodes) if nodes else []
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = Tape.active
        Tape.active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape.active = self._prev

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_loss(cls, root: Node) -> "Tape":
        order: list[Node] = []
        seen: set[int] = set()
        stack: list[tuple[Node, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for p in node.parents:
                if p.id not in seen:
                    stack.append((p, False))
        return cls(order)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def constant(value) -> Node:
    return Node(tensor(value))


def parameter(value) -> Node:
    return Node(tensor(value), requires_grad=True)


def _make(value, parents, op, backward_fn) -> Node:
    req = any(p.requires_grad for p in parents)
    return Node(value, parents, op, req, backward_fn if req else None)


def _acc(node: Node, g: np.ndarray) -> None:
    if node.requires_grad:
        node.grad += g


def backward(loss: Node) -> Tape:
    """Populate ``grad`` on every node feeding ``loss``; returns the tape used."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_loss(loss)
    for node in tape.nodes:
        if node.parents:
            node.grad = np.zeros_like(node.value)
    loss.grad = loss.grad + 1.0
    for node in reversed(tape.nodes):
        if node._backward is not None:
            node._backward(node.grad)
    return tape


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- linear algebra ---------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def bw(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)

    return _make(a.value @ b.value, (a, b), "matmul", bw)


def add(a: Node, b: Node) -> Node:
    try:
        out = a.value + b.value
    except ValueError as e:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from e

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), "add", bw)


def sub(a: Node, b: Node) -> Node:
    try:
        out = a.value - b.value
    except ValueError as e:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}") from e

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, -_unbroadcast(g, b.shape))

    return _make(out, (a, b), "sub", bw)


def mul(a: Node, b: Node) -> Node:
    try:
        out = a.value * b.value
    except ValueError as e:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from e

    def bw(g):
        _acc(a, _unbroadcast(g * b.value, a.shape))
        _acc(b, _unbroadcast(g * a.value, b.shape))

    return _make(out, (a, b), "mul", bw)


def scale(a: Node, c: float) -> Node:
    return _make(a.value * c, (a,), "scale", lambda g: _acc(a, g * c))


def sum_all(a: Node) -> Node:
    return _make(
        np.array(a.value.sum()), (a,), "sum", lambda g: _acc(a, np.full_like(a.value, g))
    )


def mean_all(a: Node) -> Node:
    n = a.value.size
    return _make(
        np.array(a.value.sum() / n), (a,), "mean", lambda g: _acc(a, np.full_like(a.value, g / n))
    )


# -- elementwise nonlinearities --------------------------------------------


def relu(x: Node) -> Node:
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), "relu", lambda g: _acc(x, g * mask))


def sigmoid(x: Node) -> Node:
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), "sigmoid", lambda g: _acc(x, g * out * (1.0 - out)))


def identity(x: Node) -> Node:
    return x


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "identity": identity}


def activation(x: Node, kind: str) -> Node:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


# -- shape manipulation -----------------------------------------------------


def transpose2d(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ShapeError(f"transpose2d needs a rank-2 input, got shape {a.shape}")
    return _make(np.ascontiguousarray(a.value.T), (a,), "transpose", lambda g: _acc(a, g.T))


def concat(a: Node, b: Node) -> Node:
    """Column-wise concatenation of two matrices with equal row counts."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat needs matrices with equal rows, got {a.shape} and {b.shape}")
    q = a.shape[1]

    def bw(g):
        _acc(a, g[:, :q])
        _acc(b, g[:, q:])

    return _make(np.concatenate([a.value, b.value], axis=1), (a, b), "concat", bw)


def slice_rows(a: Node, start: int, stop: int) -> Node:
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"row slice [{start}:{stop}) out of range for shape {a.shape}")

    def bw(g):
        if a.requires_grad:
            a.grad[start:stop] += g

    return _make(a.value[start:stop].copy(), (a,), "slice_rows", bw)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    if a.value.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"column slice [{start}:{stop}) out of range for shape {a.shape}")

    def bw(g):
        if a.requires_grad:
            a.grad[:, start:stop] += g

    return _make(np.ascontiguousarray(a.value[:, start:stop]), (a,), "slice_cols", bw)


def take_rows(a: Node, idx) -> Node:
    """Rows ``a[idx]``; repeated indices accumulate their gradients."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
        raise ShapeError(f"row indices out of range for shape {a.shape}")

    def bw(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)

    return _make(a.value[idx], (a,), "take_rows", bw)


def reshape(a: Node, shape: Sequence[int]) -> Node:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.value.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return _make(a.value.reshape(shape), (a,), "reshape", lambda g: _acc(a, g.reshape(a.shape)))


# -- convolution and pooling ------------------------------------------------


def conv2d(x: Node, weight: Node, bias: Node, stride: int = 1, padding: int = 0) -> Node:
    """2-D cross-correlation with zero padding. x: N×C×H×W, weight: F×C×Kh×Kw."""
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    if x.value.ndim != 4 or weight.value.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}")
    if bias.shape != (f,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {f} filters")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x.value, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # windows: N×C×Ho×Wo×Kh×Kw
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, weight.value, axes=([1, 4, 5], [1, 2, 3]))  # N×Ho×Wo×F
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias.value[None, :, None, None]

    def bw(g):
        if bias.requires_grad:
            bias.grad += g.sum(axis=(0, 2, 3))
        if weight.requires_grad:
            weight.grad += np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            gcols = np.tensordot(g, weight.value, axes=([1], [0]))  # N×Ho×Wo×C×Kh×Kw
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            x.grad += gxp[:, :, padding : padding + h, padding : padding + w]

    return _make(out, (x, weight, bias), "conv2d", bw)


def maxpool2d(x: Node, window: int = 2, stride: int | None = None) -> Node:
    """Per-window maximum; the gradient goes to the lowest-index maximum."""
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be positive, got {window}, {stride}")
    if x.value.ndim != 4:
        raise ShapeError(f"maxpool2d expects a 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} exceeds input {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    win = sliding_window_view(x.value, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)  # first occurrence = lowest flat index
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        if not x.requires_grad:
            return
        di, dj = np.divmod(arg, window)
        rows = np.arange(ho)[None, None, :, None] * stride + di
        cols = np.arange(wo)[None, None, None, :] * stride + dj
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        gx = np.zeros_like(x.value)
        np.add.at(gx, (nn_, cc, rows, cols), g)
        x.grad += gx

    return _make(np.ascontiguousarray(out), (x,), "maxpool2d", bw)


def upsample_nearest(x: Node, out_h: int, out_w: int) -> Node:
    """Nearest-neighbour resize of the two trailing axes to ``out_h``×``out_w``."""
    n, c, h, w = x.shape
    ri = (np.arange(out_h) * h) // out_h
    ci = (np.arange(out_w) * w) // out_w
    out = x.value[:, :, ri][:, :, :, ci]

    def bw(g):
        if not x.requires_grad:
            return
        gr = np.zeros((n, c, h, out_w))
        np.add.at(gr, (slice(None), slice(None), ri), g)
        gx = np.zeros_like(x.value)
        np.add.at(gx, (slice(None), slice(None), slice(None), ci), gr)
        x.grad += gx

    return _make(np.ascontiguousarray(out), (x,), "upsample", bw)


# -- losses -----------------------------------------------------------------


def mse_loss(pred: Node, target) -> Node:
    """Mean squared error over all elements."""
    tnode = target if isinstance(target, Node) else None
    t = target.value if tnode is not None else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"mse_loss shape mismatch: pred {pred.shape}, target {t.shape}")
    diff = pred.value - t
    count = diff.size
    parents = (pred,) if tnode is None else (pred, tnode)

    def bw(g):
        gd = (2.0 / count) * g * diff
        _acc(pred, gd)
        if tnode is not None:
            _acc(tnode, -gd)

    return _make(np.array(np.sum(diff * diff) / count), parents, "mse", bw)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: Node, labels) -> Node:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    y = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy shape mismatch: logits {logits.shape}, labels {y.shape}")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = y.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, y].sum() / n

    def bw(g):
        p = np.exp(logp)
        p[rows, y] -= 1.0
        _acc(logits, g * p / n)

    return _make(np.array(loss), (logits,), "cross_entropy", bw)
