"""Dense float64 tensors with reverse-mode differentiation.

Every primitive computes its forward value with numpy and, when any input is
tracked, records a closure that maps the output gradient to input gradients.
Broadcasting is limited to a trailing-dimension operand (bias style): the
second operand of add/sub/mul may have the shape of a suffix of the first.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class NumericFault(ArithmeticError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit seed needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        _accumulate(self, np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._grad_fn is None or node.grad is None:
                continue
            grads = node._grad_fn(node.grad)
            for p, g in zip(node._parents, grads):
                if g is not None and p.requires_grad:
                    _accumulate(p, g)

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), like.shape))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericFault(f"{op}: non-finite value in output of shape {data.shape}")
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _check_trailing(op: str, a: Tensor, b: Tensor) -> int:
    """Number of leading axes of ``a`` that ``b`` is broadcast over."""
    if b.shape == a.shape:
        return 0
    n = b.ndim
    if n <= a.ndim and a.shape[a.ndim - n :] == b.shape:
        return a.ndim - n
    raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} do not conform")


def _reduce_lead(g: np.ndarray, lead: int) -> np.ndarray:
    return g.sum(axis=tuple(range(lead))) if lead else g


# ----------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    lead = _check_trailing("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, _reduce_lead(g, lead)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    lead = _check_trailing("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -_reduce_lead(g, lead)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    lead = _check_trailing("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (g * b.data, _reduce_lead(g * a.data, lead)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for positive a."""
    if np.any(a.data <= 0):
        raise NumericFault("power: input must be positive")
    y = a.data**p
    return _make(y, (a,), lambda g: (g * p * y / a.data,), "power")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def straight_through(a: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value``, backward identity into ``a``."""
    value = np.asarray(value, dtype=np.float64)
    if value.shape != a.shape:
        raise ShapeError(f"straight_through: value {value.shape} vs input {a.shape}")
    return _make(value.copy(), (a,), lambda g: (g,), "straight_through")


# ----------------------------------------------------------------- reductions


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for {ndim}-d input")
    return axis % ndim


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        return _make(
            np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),), "sum"
        )
    ax = _norm_axis(axis, a.ndim, "sum")

    def grad_fn(g):
        g = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape),)

    return _make(a.data.sum(axis=ax, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[_norm_axis(axis, a.ndim, "mean")]
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax with max subtraction.  ``mask`` (broadcastable bool) marks
    entries that may receive probability; others get exactly zero."""
    ax = _norm_axis(axis, a.ndim, "softmax")
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(mask.any(axis=ax)):
            raise ShapeError("softmax: a row is fully masked")
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=ax, keepdims=True))
    y = e / e.sum(axis=ax, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _make(y, (a,), grad_fn, "softmax")


def layernorm(
    a: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5
) -> Tensor:
    """Normalize over the last axis, then optional affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    D = x.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta)):
        if p is not None and p.shape != (D,):
            raise ShapeError(f"layernorm: {name} shape {p.shape} != ({D},)")
    y = xhat
    if gamma is not None:
        y = y * gamma.data
    if beta is not None:
        y = y + beta.data
    lead = tuple(range(x.ndim - 1))

    def grad_fn(g):
        gx = g * gamma.data if gamma is not None else g
        dx = inv * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        dg = (g * xhat).sum(axis=lead) if gamma is not None else None
        db = g.sum(axis=lead) if beta is not None else None
        return (dx, dg, db)

    parents = (a, gamma if gamma is not None else Tensor(0.0), beta if beta is not None else Tensor(0.0))
    return _make(y, parents, grad_fn, "layernorm")


# ----------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a (..., m, k) @ b (k, n) or batched b (..., k, n) with equal leading dims."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape[:-2]} vs {b.shape[:-2]}")
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (ga, gb)

    return _make(out, (a, b), grad_fn, "matmul")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for {a.ndim}-d input")
    inverse = tuple(np.argsort(axes))
    return _make(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no inputs")
    ax = _norm_axis(axis, tensors[0].ndim, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat: shape {t.shape} does not match {ref} off axis {ax}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), grad_fn, "concat")


# ----------------------------------------------------------------- indexing


def _scatter_add(shape: tuple[int, ...], flat_index: np.ndarray, values: np.ndarray) -> np.ndarray:
    size = int(np.prod(shape))
    out = np.bincount(flat_index.ravel(), weights=values.ravel(), minlength=size)
    return out.reshape(shape)


def take(a: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather slices of ``a`` along ``axis``; output replaces that axis with
    ``indices.shape``.  Used for embedding lookup and routed gathers."""
    ax = _norm_axis(axis, a.ndim, "take")
    idx = np.asarray(indices, dtype=np.int64)
    n = a.shape[ax]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"take: index out of range [0, {n}) on axis {ax}")
    out = np.take(a.data, idx, axis=ax)

    def grad_fn(g):
        moved = np.moveaxis(a.data, ax, 0).shape
        inner = int(np.prod(moved[1:]))
        # g laid out as (pre, *idx.shape, post); bring idx dims to front
        pre = a.shape[:ax]
        g2 = np.moveaxis(
            g.reshape(int(np.prod(pre)), idx.size, -1), 1, 0
        )  # (idx.size, pre, post)
        flat = idx.ravel()[:, None] * inner + np.arange(inner)[None, :]
        acc = _scatter_add((n * inner,), flat, g2.reshape(idx.size, inner)).reshape(moved)
        return (np.moveaxis(acc, 0, ax),)

    return _make(out, (a,), grad_fn, "take")


def take_along_axis(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    ax = _norm_axis(axis, a.ndim, "take_along_axis")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != a.ndim:
        raise ShapeError(f"take_along_axis: index rank {idx.ndim} != input rank {a.ndim}")
    return _gather_along(a, idx, ax, "take_along_axis")


def _gather_along(a: Tensor, idx: np.ndarray, ax: int, op: str) -> Tensor:
    out = np.take_along_axis(a.data, idx, axis=ax)

    def grad_fn(g):
        full = np.broadcast_to(idx, g.shape)
        grids = np.indices(g.shape, sparse=True)
        coords = [np.broadcast_to(gi, g.shape) for gi in grids]
        coords[ax] = full
        flat = np.ravel_multi_index(coords, a.shape)
        return (_scatter_add(a.shape, flat, g),)

    return _make(out, (a,), grad_fn, op)


def embedding(ids: np.ndarray, table: Tensor) -> Tensor:
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got {table.shape}")
    return take(table, ids, axis=0)


# ----------------------------------------------------------------- pooling / resampling


def max_pool(a: Tensor, k: int, axis: int = -1) -> Tensor:
    """Non-overlapping window-k max along ``axis``; ties go to the lowest index."""
    ax = _norm_axis(axis, a.ndim, "max_pool")
    n = a.shape[ax]
    if k < 1 or n % k:
        raise ShapeError(f"max_pool: window {k} does not divide length {n} on axis {ax}")
    x = np.moveaxis(a.data, ax, -1)
    win = x.reshape(*x.shape[:-1], n // k, k)
    arg = win.argmax(axis=-1)
    pos = arg + np.arange(n // k) * k
    idx = np.moveaxis(pos, -1, ax)
    return _gather_along(a, idx, ax, "max_pool")


def upsample_nearest2d(a: Tensor, factor: int) -> Tensor:
    if a.ndim != 4:
        raise ShapeError(f"upsample_nearest2d: expected (B,C,H,W), got {a.shape}")
    f = factor
    out = a.data.repeat(f, axis=2).repeat(f, axis=3)
    B, C, H, W = a.shape

    def grad_fn(g):
        return (g.reshape(B, C, H, f, W, f).sum(axis=(3, 5)),)

    return _make(out, (a,), grad_fn, "upsample_nearest2d")


# ----------------------------------------------------------------- convolution


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """x (B, C, L), w (O, C, k), stride 1; default padding keeps length (odd k)."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} and kernel {w.shape} do not conform")
    O, C, k = w.shape
    p = k // 2 if padding is None else padding
    B, _, L = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p))) if p else x.data
    Lout = L + 2 * p - k + 1
    if Lout < 1:
        raise ShapeError(f"conv1d: kernel {k} longer than padded input {L + 2 * p}")
    cols = sliding_window_view(xp, k, axis=2)  # (B, C, Lout, k)
    out = np.tensordot(cols, w.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if bias is not None:
        if bias.shape != (O,):
            raise ShapeError(f"conv1d: bias {bias.shape} != ({O},)")
        out = out + bias.data[None, :, None]

    def grad_fn(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        gcols = np.tensordot(g, w.data, axes=([1], [0]))  # (B, Lout, C, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j : j + Lout] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, p : p + L] if p else gxp
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, w, bias if bias is not None else Tensor(0.0))
    return _make(np.ascontiguousarray(out), parents, grad_fn, "conv1d")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """x (B, C, H, W), w (O, C, kh, kw), stride 1, 'same' padding by default."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} and kernel {w.shape} do not conform")
    O, C, kh, kw = w.shape
    ph, pw = (kh // 2, kw // 2) if padding is None else (padding, padding)
    B, _, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    Ho, Wo = H + 2 * ph - kh + 1, W + 2 * pw - kw + 1
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B, C, Ho, Wo, kh, kw)
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (O,):
            raise ShapeError(f"conv2d: bias {bias.shape} != ({O},)")
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, w.data, axes=([1], [0]))  # (B, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + Ho, j : j + Wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph : ph + H, pw : pw + W]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, w, bias if bias is not None else Tensor(0.0))
    return _make(np.ascontiguousarray(out), parents, grad_fn, "conv2d")


def depthwise_conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 'same' convolution: x (B, C, H, W), w (C, kh, kw)."""
    if x.ndim != 4 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"depthwise_conv2d: input {x.shape} and kernel {w.shape} do not conform")
    C, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    B, _, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    Ho, Wo = H + 2 * ph - kh + 1, W + 2 * pw - kw + 1
    out = np.zeros((B, C, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i : i + Ho, j : j + Wo] * w.data[None, :, i, j, None, None]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gw[:, i, j] = (g * xp[:, :, i : i + Ho, j : j + Wo]).sum(axis=(0, 2, 3))
                gxp[:, :, i : i + Ho, j : j + Wo] += g * w.data[None, :, i, j, None, None]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gxp[:, :, ph : ph + H, pw : pw + W], gw, gb)

    parents = (x, w, bias if bias is not None else Tensor(0.0))
    return _make(out, parents, grad_fn, "depthwise_conv2d")

