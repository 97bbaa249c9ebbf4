"""Finite-difference gradient checking for primitives and whole networks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .rng import make_rng
from .tensor import Tensor

STEP = 1e-5
TOLERANCE = 1e-4
PROBES = 10
# denominators below this floor make the ratio an absolute error
REL_FLOOR = 1e-3


@dataclass
class GradReport:
    op_name: str
    max_rel_error: float
    passed: bool
    probe_count: int


def _loss(out: Tensor, weights: np.ndarray) -> float:
    return float(np.sum(out.data * weights))


def check_function(
    name: str,
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    seed: int,
    probes: int = PROBES,
    tol: float = TOLERANCE,
    step: float = STEP,
) -> GradReport:
    """Compare backprop gradients of sum(fn() * R) to central differences.

    ``fn`` must read the current ``.data`` of ``tensors`` every call; probes
    pick a tensor uniformly, then an element uniformly.  The difference step
    is ``step`` times the tensor's RMS so tiny-valued inputs such as raw
    echoes are perturbed in proportion.
    """
    rng = make_rng(seed, "gradcheck", name)
    for t in tensors:
        t.grad = None
    out = fn()
    weights = rng.uniform(-1.0, 1.0, out.shape)
    out.backward(weights)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    with T.no_grad():
        for _ in range(probes):
            ti = int(rng.integers(len(tensors)))
            t = tensors[ti]
            flat = t.data.reshape(-1)
            j = int(rng.integers(flat.size))
            rms = float(np.sqrt(np.mean(t.data**2)))
            h = step * rms if rms > 0 else step
            orig = flat[j]
            flat[j] = orig + h
            up = _loss(fn(), weights)
            flat[j] = orig - h
            down = _loss(fn(), weights)
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[ti].reshape(-1)[j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            worst = max(worst, rel)
    return GradReport(name, worst, worst <= tol, probes)


# ----------------------------------------------------------------- primitive registry


@dataclass
class _Entry:
    fn: Callable[..., Tensor]
    shapes: list[tuple[int, ...]]
    sample: Callable[[np.random.Generator, tuple[int, ...]], np.ndarray]


def _normal(rng, shape):
    return rng.standard_normal(shape)


def _positive(rng, shape):
    return rng.uniform(0.2, 2.0, shape)


def _away_from_zero(rng, shape):
    # keeps probes clear of the kink at 0
    return rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def _distinct(rng, shape):
    # well-separated values so max-pool probes never cross a tie
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) * 0.1 + rng.uniform(-0.01, 0.01, shape))


def _interior(rng, shape):
    return rng.uniform(-0.8, 0.8, shape)


PRIMITIVES: dict[str, _Entry] = {}


def register(name: str, shapes, sample=_normal):
    def deco(fn):
        PRIMITIVES[name] = _Entry(fn, [tuple(s) for s in shapes], sample)
        return fn

    return deco


register("add", [(3, 4), (4,)])(T.add)
register("sub", [(3, 4), (3, 4)])(T.sub)
register("mul", [(2, 3, 4), (4,)])(T.mul)
register("scale", [(3, 5)])(lambda a: T.scale(a, -2.5))
register("relu", [(4, 5)], _away_from_zero)(T.relu)
register("tanh", [(4, 5)])(T.tanh)
register("sigmoid", [(4, 5)])(T.sigmoid)
register("abs", [(4, 5)], _away_from_zero)(T.absolute)
register("square", [(4, 5)])(T.square)
register("power", [(4, 5)], _positive)(lambda a: T.power(a, -0.25))
register("clamp", [(4, 5)], _interior)(lambda a: T.clamp(a, -1.0, 1.0))
register("sum", [(3, 4, 2)])(lambda a: T.sum_(a, axis=1))
register("mean", [(3, 4, 2)])(lambda a: T.mean(a, axis=-1))
register("softmax", [(5,)])(lambda a: T.softmax(a, axis=-1))
register(
    "masked_softmax", [(2, 3, 5)]
)(lambda a: T.softmax(a, axis=-1, mask=np.array([True, True, False, True, False])))
register("layernorm", [(3, 6), (6,), (6,)])(lambda a, g, b: T.layernorm(a, g, b))
register("matmul", [(2, 3), (3, 2)])(T.matmul)
register("batched_matmul", [(2, 3, 4), (2, 4, 5)])(T.matmul)
register("transpose", [(2, 3, 4)])(lambda a: T.transpose(a, (2, 0, 1)))
register("reshape", [(2, 3, 4)])(lambda a: T.reshape(a, (6, 4)))
register("concat", [(2, 3), (2, 5)])(lambda a, b: T.concat([a, b], axis=1))
register("conv1d", [(2, 3, 9), (4, 3, 3), (4,)])(lambda x, w, b: T.conv1d(x, w, b))
register("conv2d", [(2, 3, 5, 5), (4, 3, 3, 3), (4,)])(lambda x, w, b: T.conv2d(x, w, b))
register("depthwise_conv2d", [(2, 3, 4, 4), (3, 3, 3)])(lambda x, w: T.depthwise_conv2d(x, w))
register("max_pool", [(2, 3, 8)], _distinct)(lambda a: T.max_pool(a, 2, axis=-1))
register("upsample_nearest2d", [(2, 3, 2, 2)])(lambda a: T.upsample_nearest2d(a, 2))
register("embedding", [(7, 4)])(lambda tab: T.embedding(np.array([[0, 3, 3], [6, 1, 0]]), tab))
register("take", [(5, 3, 2)])(lambda a: T.take(a, np.array([[4, 0], [4, 2]]), axis=0))
register(
    "take_along_axis", [(3, 6)]
)(lambda a: T.take_along_axis(a, np.array([[0, 5], [2, 2], [1, 4]]), axis=1))


def check_gradients(
    op_name: str,
    shapes: Sequence[Sequence[int]] | None = None,
    seed: int = 0,
    probes: int = PROBES,
    tol: float = TOLERANCE,
) -> GradReport:
    """Gradient check for a registered primitive at a seeded random point."""
    if op_name not in PRIMITIVES:
        raise KeyError(f"unregistered primitive {op_name!r}; known: {sorted(PRIMITIVES)}")
    entry = PRIMITIVES[op_name]
    shapes = [tuple(s) for s in shapes] if shapes is not None else entry.shapes
    rng = make_rng(seed, "inputs", op_name)
    inputs = [Tensor(entry.sample(rng, s), requires_grad=True) for s in shapes]
    return check_function(op_name, lambda: entry.fn(*inputs), inputs, seed, probes, tol)


# ----------------------------------------------------------------- whole networks


def _net_signal(rng):
    from .msf import MsfConfig, SignalExtractor
    from .radar import RadarConfig, TargetState, synth_echo

    radar = RadarConfig()
    net = SignalExtractor(MsfConfig(), rng, radar)
    # receiver noise keeps units off the exact ReLU kink of the silent pre-echo span
    frames = [
        synth_echo(TargetState(d, th, v), radar, 1e-6, rng)
        for d, th, v in ((12.0, 1.9, 4.0), (25.0, 2.4, 11.0))
    ]
    xr = Tensor(np.stack([f.real for f in frames]), requires_grad=True)
    xi = Tensor(np.stack([f.imag for f in frames]), requires_grad=True)
    return (lambda: net(xr, xi)), net.parameters() + [xr, xi]


def _net_vision(rng):
    from .msf import MsfConfig, VisionExtractor

    net = VisionExtractor(MsfConfig(), rng)
    img = Tensor(rng.uniform(0, 1, (2, 32, 32, 3)), requires_grad=True)
    return (lambda: net(img)), net.parameters() + [img]


def _net_fusion(rng):
    from .msf import CrossFusion

    net = CrossFusion(32, rng)
    a = Tensor(rng.standard_normal((2, 12, 32)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 12, 32)), requires_grad=True)
    return (lambda: net(a, b)), net.parameters() + [a, b]


def _net_lse(rng):
    from .lse import Lse, LseConfig, tokenize

    net = Lse(LseConfig(), rng)
    s_mul = Tensor(rng.standard_normal((2, 12, 32)), requires_grad=True)
    tokens = tokenize(["the SNR is 5 dB and the signal modulation is BPSK", ""])
    return (lambda: net(s_mul, tokens)), net.parameters() + [s_mul]


def _net_ssd(rng):
    from .ssd import Ssd, SsdConfig

    net = Ssd(SsdConfig(), rng)
    e = Tensor(rng.uniform(-1, 1, (2, 16, 16)), requires_grad=True)

    def fn():
        out = net(e)
        parts = [T.reshape(out.m_hat, (2, -1)), *(T.reshape(t, (2, 1)) for t in (out.theta, out.v, out.d))]
        return T.concat(parts, axis=1)

    return fn, net.parameters() + [e]


NETWORKS = {
    "signal_extractor": _net_signal,
    "vision_extractor": _net_vision,
    "fusion": _net_fusion,
    "lse_encoder": _net_lse,
    "ssd": _net_ssd,
}


def check_network(name: str, seed: int = 0, probes: int = PROBES, tol: float = TOLERANCE) -> GradReport:
    if name not in NETWORKS:
        raise KeyError(f"unknown network {name!r}; known: {sorted(NETWORKS)}")
    fn, tensors = NETWORKS[name](make_rng(seed, "network", name))
    return check_function(name, fn, tensors, seed, probes, tol)


def run_suite(seed: int = 0, probes: int = PROBES, tol: float = TOLERANCE) -> list[GradReport]:
    reports = [check_gradients(op, seed=seed, probes=probes, tol=tol) for op in PRIMITIVES]
    reports += [check_network(net, seed=seed, probes=probes, tol=tol) for net in NETWORKS]
    return reports
