"""Dense tensors with a reverse-mode tape.

Operations executed while a :class:`Tape` is active are recorded in execution
order; :meth:`Tape.backward` replays their adjoints in reverse.  Outside a tape
the same functions run as plain numpy forward passes.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A forward value or gradient became NaN or infinite."""


class ShapeMismatch(ValueError):
    pass


class Tensor:
    """Row-major numeric array that can take part in differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; the functional forms below are the real implementations
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)


class Parameter(Tensor):
    """Trainable tensor carrying its Adam moment estimates."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)
        self.data = np.array(self.data, copy=True)
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations.

    Use as a context manager around a forward pass, then call
    :meth:`backward` on the scalar loss.  Gradients accumulate into
    ``Parameter.grad``; leaf tensors created with ``requires_grad=True``
    receive ``grad`` as well.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, loss: Tensor, check_finite: bool = True) -> None:
        if loss.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
        if check_finite and not np.all(np.isfinite(loss.data)):
            raise NonFiniteError(f"loss is not finite: {loss.data!r}")
        produced = {id(n.out) for n in self.nodes}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.out), None)
            if g_out is None:
                continue
            for inp, g in zip(node.inputs, node.backward(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                if id(inp) in produced:
                    prev = grads.get(id(inp))
                    grads[id(inp)] = g if prev is None else prev + g
                    continue
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += g
                if check_finite and not np.all(np.isfinite(inp.grad)):
                    raise NonFiniteError(f"non-finite gradient for {inp!r}")
        self.nodes.clear()


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _finish(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _finish(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _finish(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _finish(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return _finish(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _finish(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _finish(x.data * mask, (x,), lambda g: (g * mask,))


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: surviving activations are scaled by 1/(1-p) at train time."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _finish(x.data * keep, (x,), lambda g: (g * keep,))


# -- shape ----------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _finish(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _finish(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, index) -> Tensor:
    # basic indexing only (slices and ints); no repeated positions
    def backward(g):
        full = np.zeros_like(x.data)
        full[index] += g
        return (full,)

    return _finish(np.array(x.data[index]), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _finish(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# -- reductions / products -------------------------------------------------

def tensor_sum(x: Tensor) -> Tensor:
    return _finish(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def tensor_mean(x: Tensor) -> Tensor:
    n = x.size
    return _finish(
        np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),)
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    return _finish(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``weight @ x + bias`` for a vector ``x`` of length n, or row-wise on a batch (B, n)."""
    m, n = weight.shape
    if x.shape[-1] != n or x.data.ndim not in (1, 2):
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (m,):
        raise ShapeMismatch(f"linear: bias {bias.shape} vs weight {weight.shape}")
    xd = x.data
    out = xd @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data
        gw = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
        gb = None if bias is None else (g if g.ndim == 1 else g.sum(axis=0))
        return (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _finish(out, inputs, backward)


# -- convolution / pooling ---------------------------------------------------

def _norm_stride(stride) -> tuple[int, int]:
    """Return (sW, sH) from an int or a (sW, sH) pair."""
    if isinstance(stride, int):
        return stride, stride
    sw, sh = stride
    return int(sw), int(sh)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride=1) -> Tensor:
    """3x3 cross-correlation with one pixel of zero padding.

    ``x`` is (C_in, H, W) or batched (N, C_in, H, W); ``kernels`` is
    (C_out, C_in, 3, 3).  ``stride`` is an int or a ``(sW, sH)`` pair, so the
    output has height ceil(H / sH) and width ceil(W / sW).
    """
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    if kernels.data.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeMismatch(f"conv2d expects C_out x C_in x 3 x 3 kernels, got {kernels.shape}")
    n, c_in, h, w = xd.shape
    c_out = kernels.shape[0]
    if kernels.shape[1] != c_in:
        raise ShapeMismatch(f"conv2d: input has {c_in} channels, kernels expect {kernels.shape[1]}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatch(f"conv2d: bias {bias.shape} for {c_out} kernels")
    sw, sh = _norm_stride(stride)
    if sw not in (1, 2) or sh not in (1, 2):
        raise ValueError(f"stride components must be 1 or 2, got {(sw, sh)}")
    ho, wo = -(-h // sh), -(-w // sw)

    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # cols[n, c, ki, kj, i, j] = xp[n, c, ki + sh*i, kj + sw*j]
    s = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c_in, 3, 3, ho, wo),
        strides=(s[0], s[1], s[2], s[3], s[2] * sh, s[3] * sw),
        writeable=False,
    )
    cols2 = np.ascontiguousarray(cols.transpose(1, 2, 3, 0, 4, 5)).reshape(c_in * 9, n * ho * wo)
    wmat = kernels.data.reshape(c_out, c_in * 9)
    out = (wmat @ cols2).reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        g = g if batched else g[None]
        g2 = g.transpose(1, 0, 2, 3).reshape(c_out, n * ho * wo)
        gw = (g2 @ cols2.T).reshape(kernels.shape)
        gcols = (wmat.T @ g2).reshape(c_in, 3, 3, n, ho, wo)
        gxp = np.zeros_like(xp)
        for ki in range(3):
            for kj in range(3):
                gxp[:, :, ki : ki + sh * ho : sh, kj : kj + sw * wo : sw] += gcols[:, ki, kj].transpose(
                    1, 0, 2, 3
                )
        gx = gxp[:, :, 1 : h + 1, 1 : w + 1]
        if not batched:
            gx = gx[0]
        gb = None if bias is None else g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _finish(out if batched else out[0], inputs, backward)


class OddExtent(ValueError):
    pass


def avgpool2d(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 mean pooling over the last two axes."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise OddExtent(f"avgpool2d needs even spatial extents, got {(h, w)}")
    lead = x.shape[:-2]
    v = x.data.reshape(*lead, h // 2, 2, w // 2, 2)
    out = v.mean(axis=(-3, -1))

    def backward(g):
        g4 = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)
        return (g4 * 0.25,)

    return _finish(out, (x,), backward)


# -- losses ------------------------------------------------------------------

BCE_EPS = 1e-7


def bce_loss(p: Tensor, label, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against 0/1 labels.

    ``p`` is clamped to [eps, 1 - eps]; the clamp passes no gradient where it binds.
    """
    y = np.asarray(label, dtype=p.dtype)
    y = np.broadcast_to(y, p.shape)
    pc = np.clip(p.data, eps, 1.0 - eps)
    n = max(p.size, 1)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum() / n
    inside = (p.data >= eps) & (p.data <= 1.0 - eps)

    def backward(g):
        return (g * inside * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n,)

    return _finish(np.asarray(loss, dtype=p.dtype), (p,), backward)
