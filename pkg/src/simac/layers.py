"""Parameter containers, common layers, the optimizer and checkpoint files."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def param(rng: np.random.Generator, shape, std: float) -> Tensor:
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """Anything holding trainable tensors, directly or in child modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"checkpoint mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = param(rng, (n_in, n_out), 1.0 / math.sqrt(n_in))
        self.bias = zeros((n_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return T.add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = ones((dim,))
        self.beta = zeros((dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gamma, self.beta)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(dk)) v over the last two axes."""
    nd = k.ndim
    kt = T.transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2))
    scores = T.scale(T.matmul(q, kt), 1.0 / math.sqrt(q.shape[-1]))
    return T.matmul(T.softmax(scores, axis=-1, mask=mask), v)


def split_heads(x: Tensor, heads: int) -> Tensor:
    B, L, D = x.shape
    return T.transpose(T.reshape(x, (B, L, heads, D // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    B, H, L, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, L, H * dh))


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        q, k, v = (split_heads(f(x), self.heads) for f in (self.q, self.k, self.v))
        mask = None if key_mask is None else np.asarray(key_mask, bool)[:, None, None, :]
        return self.out(merge_heads(attention(q, k, v, mask)))


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: x + attn(LN x), then x + ff(LN x)."""

    def __init__(self, dim: int, heads: int, ff_mult: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ff = FeedForward(dim, dim * ff_mult, rng)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        x = T.add(x, self.attn(self.ln1(x), key_mask))
        return T.add(x, self.ff(self.ln2(x)))


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ----------------------------------------------------------------- checkpoints
#
# <prefix>.bin holds little-endian float64 values back to back; <prefix>.idx
# has one line per tensor: name, comma-separated shape, element offset.


def save_checkpoint(prefix: str | Path, state: dict[str, np.ndarray]) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    offset = 0
    lines = []
    with open(prefix.with_suffix(".bin"), "wb") as fh:
        for name, arr in state.items():
            arr = np.asarray(arr, dtype="<f8")
            shape = ",".join(str(s) for s in arr.shape)
            lines.append(f"{name}\t{shape}\t{offset}\n")
            fh.write(arr.tobytes())
            offset += arr.size
    prefix.with_suffix(".idx").write_text("".join(lines))


def load_checkpoint(prefix: str | Path) -> dict[str, np.ndarray]:
    prefix = Path(prefix)
    flat = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
    state = {}
    for line in prefix.with_suffix(".idx").read_text().splitlines():
        if not line.strip():
            continue
        name, shape, offset = line.split("\t")
        dims = tuple(int(s) for s in shape.split(",")) if shape else ()
        n = int(np.prod(dims)) if dims else 1
        start = int(offset)
        if start + n > flat.size:
            raise ValueError(f"{prefix}: tensor {name} runs past end of data")
        state[name] = flat[start : start + n].reshape(dims).astype(np.float64)
    return state
