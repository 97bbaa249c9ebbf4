"""Multimodal semantic fusion: echo features, image features, cross attention.

Echo path: a fixed dechirp front end, three complex conv + complex max-pool
stages, real/imag concatenation and a linear map to (B, L_s, d).
Image path: patch embedding, bi-level routing attention (BRA) blocks,
average pooling of the token axis down to L_s, linear map to d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import FeedForward, LayerNorm, Linear, Module, attention, param, zeros
from .radar import RadarConfig, lfm_waveform, path_gain
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class MsfConfig:
    L_s: int = 12
    d: int = 32
    K: int = 10
    L_sig: int = 1500
    conv_channels: tuple[int, ...] = (8, 16, 16)
    conv_kernel: int = 7
    pools: tuple[int, ...] = (5, 5, 5)
    image_size: int = 32
    patch: int = 4
    vis_dim: int = 32
    S: int = 4
    h: int = 2
    bra_depth: int = 1
    dechirp: bool = True
    ref_distance: float = 10.0
    lag: int = 0
    normalize: bool = False
    pair: bool = False
    raw: bool = True

    def __post_init__(self):
        if len(self.conv_channels) != len(self.pools):
            raise ValueError("conv_channels and pools must have equal length")
        if self.L_sig != self.L_s * int(np.prod(self.pools)):
            raise ValueError(
                f"pools {self.pools} take L_sig={self.L_sig} to "
                f"{self.L_sig / np.prod(self.pools):g}, not L_s={self.L_s}"
            )
        if self.image_size % self.patch:
            raise ValueError("patch size must divide the image size")
        side = self.image_size // self.patch
        if side % self.S:
            raise ValueError(f"{side}x{side} token grid does not split into {self.S}x{self.S} regions")
        if not 0 <= self.lag < self.L_sig:
            raise ValueError(f"lag {self.lag} must lie in [0, L_sig)")
        if self.in_channels == 0:
            raise ValueError("front end emits no channels; enable raw, lag, pair or normalize")
        if not 1 <= self.h <= self.S * self.S:
            raise ValueError(f"h={self.h} must lie in [1, S^2={self.S * self.S}]")

    @property
    def in_channels(self) -> int:
        return (
            (self.K if self.raw else 0)
            + (self.K if self.lag else 0)
            + (self.K - 1 if self.pair else 0)
            + (1 if self.normalize else 0)
        )

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid


# ----------------------------------------------------------------- complex CNN


def complex_conv(x_real: Tensor, x_imag: Tensor, W_real: Tensor, W_imag: Tensor):
    """Pre-activation complex convolution (W_r + jW_i) * (x_r + jx_i)."""
    z_real = T.sub(T.conv1d(x_real, W_real), T.conv1d(x_imag, W_imag))
    z_imag = T.add(T.conv1d(x_imag, W_real), T.conv1d(x_real, W_imag))
    return z_real, z_imag


def complex_conv_layer(x_real: Tensor, x_imag: Tensor, W_real: Tensor, W_imag: Tensor):
    """Complex convolution followed by ReLU on each part separately."""
    z_real, z_imag = complex_conv(x_real, x_imag, W_real, W_imag)
    return T.relu(z_real), T.relu(z_imag)


def complex_max_pool(x_real: Tensor, x_imag: Tensor, k: int):
    """Keep the sample of largest modulus in each length-k window."""
    B, C, L = x_real.shape
    if L % k:
        raise ShapeError(f"complex_max_pool: window {k} does not divide length {L}")
    mod = (x_real.data**2 + x_imag.data**2).reshape(B, C, L // k, k)
    idx = mod.argmax(axis=-1) + np.arange(L // k) * k
    return T.take_along_axis(x_real, idx, 2), T.take_along_axis(x_imag, idx, 2)


POWER_FLOOR = 1e-12


def lag_product(xr: Tensor, xi: Tensor, m: int):
    """x[t+m] conj(x[t]) along the last axis, zero over the final m samples."""
    B, C, L = xr.shape
    ahead, now = np.arange(m, L), np.arange(L - m)
    ar, ai = T.take(xr, ahead, axis=2), T.take(xi, ahead, axis=2)
    br, bi = T.take(xr, now, axis=2), T.take(xi, now, axis=2)
    pad = Tensor(np.zeros((B, C, m)))
    zr = T.add(T.mul(ar, br), T.mul(ai, bi))
    zi = T.sub(T.mul(ai, br), T.mul(ar, bi))
    return T.concat([zr, pad], axis=2), T.concat([zi, pad], axis=2)


def pair_product(xr: Tensor, xi: Tensor):
    """x[k+1] conj(x[k]) over adjacent antennas (axis 1)."""
    K = xr.shape[1]
    nxt, cur = np.arange(1, K), np.arange(K - 1)
    ar, ai = T.take(xr, nxt, axis=1), T.take(xi, nxt, axis=1)
    br, bi = T.take(xr, cur, axis=1), T.take(xi, cur, axis=1)
    return T.add(T.mul(ar, br), T.mul(ai, bi)), T.sub(T.mul(ai, br), T.mul(ar, bi))


def _batch_scale(x: Tensor, s: Tensor) -> Tensor:
    """(B, ...) times (B,) via a batch-last layout."""
    nd = x.ndim
    to_last = tuple(range(1, nd)) + (0,)
    back = (nd - 1,) + tuple(range(nd - 1))
    return T.transpose(T.mul(T.transpose(x, to_last), s), back)


def dechirp_reference(radar: RadarConfig, ref_distance: float) -> np.ndarray:
    """conj(chirp) scaled so a target at ref_distance has unit amplitude."""
    return np.conj(lfm_waveform(radar)) / path_gain(ref_distance, radar)


class SignalExtractor(Module):
    def __init__(self, cfg: MsfConfig, rng: np.random.Generator, radar: RadarConfig | None = None):
        self.cfg = cfg
        radar = radar or RadarConfig()
        if radar.L_sig != cfg.L_sig or radar.K != cfg.K:
            raise ValueError(f"radar gives {radar.K}x{radar.L_sig} frames, config expects {cfg.K}x{cfg.L_sig}")
        ref = dechirp_reference(radar, cfg.ref_distance)
        if not cfg.dechirp:
            ref = np.full_like(ref, abs(ref[0]))
        self._ref_real = Tensor(ref.real.copy())
        self._ref_imag = Tensor(ref.imag.copy())
        self.W_real, self.W_imag = [], []
        c_in = cfg.in_channels
        for c_out in cfg.conv_channels:
            std = 1.0 / math.sqrt(c_in * cfg.conv_kernel)
            self.W_real.append(param(rng, (c_out, c_in, cfg.conv_kernel), std))
            self.W_imag.append(param(rng, (c_out, c_in, cfg.conv_kernel), std))
            c_in = c_out
        self.head = Linear(2 * c_in, cfg.d, rng)

    def front_end(self, xr: Tensor, xi: Tensor):
        """Fixed preprocessing ahead of the learned convolutions.

        Multiply by the reference r, then emit any of: the echo itself
        (``raw``), the lag product y[t+m] conj(y[t]) whose phase is set by the
        beat frequency (``lag``), the adjacent-antenna product whose phase is
        set by the angle (``pair``).  With ``normalize`` the frame is first
        scaled to unit mean power and a constant channel P^(-1/4) carries the
        range information the scaling removes.
        """
        rr, ri = self._ref_real, self._ref_imag
        yr = T.sub(T.mul(xr, rr), T.mul(xi, ri))
        yi = T.add(T.mul(xi, rr), T.mul(xr, ri))
        B, K, L = yr.shape
        if self.cfg.normalize:
            power = T.mean(T.reshape(T.add(T.square(yr), T.square(yi)), (B, K * L)), axis=1)
            power = T.add(power, Tensor(np.full(B, POWER_FLOOR)))
            yr, yi = _batch_scale(yr, T.power(power, -0.5)), _batch_scale(yi, T.power(power, -0.5))
        parts = []
        if self.cfg.raw:
            parts.append((yr, yi))
        if self.cfg.lag:
            parts.append(lag_product(yr, yi, self.cfg.lag))
        if self.cfg.pair:
            parts.append(pair_product(yr, yi))
        if self.cfg.normalize:
            ones = Tensor(np.ones((1, L, B)))
            level = T.transpose(T.mul(ones, T.power(power, -0.25)), (2, 0, 1))
            parts.append((level, Tensor(np.zeros((B, 1, L)))))
        return T.concat([p[0] for p in parts], axis=1), T.concat([p[1] for p in parts], axis=1)

    def __call__(self, echo_real: Tensor, echo_imag: Tensor) -> Tensor:
        if echo_real.shape[1:] != (self.cfg.K, self.cfg.L_sig):
            raise ShapeError(
                f"echo shape {echo_real.shape[1:]} does not match ({self.cfg.K}, {self.cfg.L_sig})"
            )
        zr, zi = self.front_end(echo_real, echo_imag)
        for wr, wi, k in zip(self.W_real, self.W_imag, self.cfg.pools):
            zr, zi = complex_conv_layer(zr, zi, wr, wi)
            zr, zi = complex_max_pool(zr, zi, k)
        z = T.transpose(T.concat([zr, zi], axis=1), (0, 2, 1))  # (B, L_s, 2C)
        return self.head(z)


# ----------------------------------------------------------------- BRA


def to_regions(x: Tensor, grid: int, S: int) -> Tensor:
    """(B, N, C) raster tokens to (B, S*S, r*r, C) region-major layout."""
    B, N, C = x.shape
    r = grid // S
    x = T.reshape(x, (B, S, r, S, r, C))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B, S * S, r * r, C))


def from_regions(x: Tensor, grid: int, S: int) -> Tensor:
    B, _, _, C = x.shape
    r = grid // S
    x = T.reshape(x, (B, S, S, r, r, C))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B, grid * grid, C))


def route_regions(q_regions: np.ndarray, k_regions: np.ndarray, h: int) -> np.ndarray:
    """Top-h key regions per query region; equal scores go to the lower index."""
    affinity = q_regions @ np.swapaxes(k_regions, -1, -2)  # (B, S2, S2)
    order = np.argsort(-affinity, axis=-1, kind="stable")
    return order[..., :h]


class BiLevelRoutingAttention(Module):
    def __init__(self, dim: int, S: int, h: int, grid: int, rng: np.random.Generator):
        if grid % S:
            raise ValueError(f"token grid {grid} does not split into {S} regions per side")
        if not 1 <= h <= S * S:
            raise ValueError(f"h={h} outside [1, {S * S}]")
        self.S, self.h, self.grid = S, h, grid
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.lce_w = param(rng, (dim, 3, 3), 1.0 / 3.0)
        self.lce_b = zeros((dim,))
        self.last_routes: np.ndarray | None = None

    def lce(self, v: Tensor) -> Tensor:
        B, N, C = v.shape
        sp = T.reshape(T.transpose(v, (0, 2, 1)), (B, C, self.grid, self.grid))
        out = T.depthwise_conv2d(sp, self.lce_w, self.lce_b)
        return T.transpose(T.reshape(out, (B, C, N)), (0, 2, 1))

    def __call__(self, x: Tensor) -> Tensor:
        B, N, C = x.shape
        if N != self.grid * self.grid:
            raise ShapeError(f"BRA expects {self.grid ** 2} tokens, got {N}")
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        S2 = self.S * self.S
        qr, kr, vr = (to_regions(t, self.grid, self.S) for t in (q, k, v))
        routes = route_regions(qr.data.mean(axis=2), kr.data.mean(axis=2), self.h)
        self.last_routes = routes
        flat = routes + (np.arange(B) * S2)[:, None, None]  # (B, S2, h)
        n_r = qr.shape[2]
        kf = T.reshape(kr, (B * S2, n_r, C))
        vf = T.reshape(vr, (B * S2, n_r, C))
        kg = T.reshape(T.take(kf, flat, axis=0), (B, S2, self.h * n_r, C))
        vg = T.reshape(T.take(vf, flat, axis=0), (B, S2, self.h * n_r, C))
        out = from_regions(attention(qr, kg, vg), self.grid, self.S)
        return T.add(out, self.lce(v))


def dense_attention_with_lce(bra: BiLevelRoutingAttention, x: Tensor) -> Tensor:
    """Reference: full attention over all tokens plus the same LCE term."""
    q, k, v = bra.wq(x), bra.wk(x), bra.wv(x)
    return T.add(attention(q, k, v), bra.lce(v))


class BraBlock(Module):
    def __init__(self, dim: int, S: int, h: int, grid: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.bra = BiLevelRoutingAttention(dim, S, h, grid, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = FeedForward(dim, 2 * dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.bra(self.ln1(x)))
        return T.add(x, self.mlp(self.ln2(x)))


def patchify(img, p: int):
    """(B, H, W, 3) image to (B, H/p * W/p, p*p*3) raster-ordered patches."""
    if not isinstance(img, Tensor):
        img = Tensor(img)
    B, H, W, C = img.shape
    x = T.reshape(img, (B, H // p, p, W // p, p, C))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B, (H // p) * (W // p), p * p * C))


def pooling_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Adaptive average pooling weights: row i averages [floor(i n/m), ceil((i+1) n/m))."""
    P = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        P[i, lo:hi] = 1.0 / (hi - lo)
    return P


class VisionExtractor(Module):
    def __init__(self, cfg: MsfConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = Linear(cfg.patch * cfg.patch * 3, cfg.vis_dim, rng)
        self.pos = param(rng, (cfg.n_tokens, cfg.vis_dim), 0.02)
        self.blocks = [BraBlock(cfg.vis_dim, cfg.S, cfg.h, cfg.grid, rng) for _ in range(cfg.bra_depth)]
        self.norm = LayerNorm(cfg.vis_dim)
        self._pool_t = Tensor(pooling_matrix(cfg.n_tokens, cfg.L_s).T.copy())
        self.proj = Linear(cfg.vis_dim, cfg.d, rng)

    def patch_embed(self, image) -> Tensor:
        return self.embed(patchify(image, self.cfg.patch))

    def __call__(self, image) -> Tensor:
        size = self.cfg.image_size
        if tuple(image.shape[1:]) != (size, size, 3):
            raise ShapeError(f"image shape {tuple(image.shape[1:])} != ({size}, {size}, 3)")
        x = T.add(self.patch_embed(image), self.pos)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        pooled = T.transpose(T.matmul(T.transpose(x, (0, 2, 1)), self._pool_t), (0, 2, 1))
        return self.proj(pooled)


# ----------------------------------------------------------------- fusion


class CrossFusion(Module):
    """Bidirectional single-head cross attention with residual sum."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.Wq1, self.Wk1, self.Wv1 = (Linear(d, d, rng, bias=False) for _ in range(3))
        self.Wq2, self.Wk2, self.Wv2 = (Linear(d, d, rng, bias=False) for _ in range(3))
        self.norm = LayerNorm(d)

    def __call__(self, s_sig: Tensor, s_vis: Tensor) -> Tensor:
        if s_sig.shape != s_vis.shape:
            raise ShapeError(f"fusion inputs differ: {s_sig.shape} vs {s_vis.shape}")
        z_vis = attention(self.Wq1(s_sig), self.Wk2(s_vis), self.Wv2(s_vis))
        z_sig = attention(self.Wq2(s_vis), self.Wk1(s_sig), self.Wv1(s_sig))
        return T.add(T.add(self.norm(T.add(z_vis, z_sig)), s_sig), s_vis)


class Msf(Module):
    def __init__(self, cfg: MsfConfig, rng: np.random.Generator, radar: RadarConfig | None = None):
        self.signal = SignalExtractor(cfg, rng, radar)
        self.vision = VisionExtractor(cfg, rng)
        self.fusion = CrossFusion(cfg.d, rng)

    def __call__(self, echo_real: Tensor, echo_imag: Tensor, image) -> Tensor:
        return self.fusion(self.signal(echo_real, echo_imag), self.vision(image))
