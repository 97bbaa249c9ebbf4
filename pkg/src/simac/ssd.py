"""Task-oriented sensing decoder: grid backbone, ViT image head, regression heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import LayerNorm, Linear, Module, TransformerBlock, param, zeros
from .tensor import ShapeError, Tensor

TASKS = ("image", "theta", "v", "d")


@dataclass(frozen=True)
class SsdConfig:
    L_fusion: int = 16
    in_ch: int = 16
    channels: int = 64
    blocks: int = 2
    heads: int = 2
    ff_mult: int = 2
    patch: int = 4
    image_size: int = 32
    head_channels: int = 16

    def __post_init__(self):
        side = math.isqrt(self.L_fusion)
        if side * side != self.L_fusion:
            raise ValueError(f"L_fusion={self.L_fusion} is not a perfect square")
        if 2 * side * self.patch != self.image_size:
            raise ValueError(
                f"{2 * side}x{2 * side} tokens of {self.patch}px patches do not tile a {self.image_size}px image"
            )

    @property
    def side(self) -> int:
        return math.isqrt(self.L_fusion)


@dataclass
class SensingOutput:
    m_hat: Tensor | None
    theta: Tensor | None
    v: Tensor | None
    d: Tensor | None


def unpatchify(x: Tensor, p: int, grid: int) -> Tensor:
    """(B, grid*grid, p*p*3) raster tokens to (B, grid*p, grid*p, 3)."""
    B = x.shape[0]
    x = T.reshape(x, (B, grid, grid, p, p, 3))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B, grid * p, grid * p, 3))


class ToGrid(Module):
    def __init__(self, cfg: SsdConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.w = param(rng, (cfg.channels, cfg.in_ch, 3, 3), math.sqrt(2.0 / (cfg.in_ch * 9)))
        self.b = zeros((cfg.channels,))

    def __call__(self, e_hat: Tensor) -> Tensor:
        B, L, c = e_hat.shape
        if (L, c) != (self.cfg.L_fusion, self.cfg.in_ch):
            raise ShapeError(f"to_grid expects (B, {self.cfg.L_fusion}, {self.cfg.in_ch}), got {e_hat.shape}")
        s = self.cfg.side
        grid = T.reshape(T.transpose(e_hat, (0, 2, 1)), (B, c, s, s))
        return T.relu(T.conv2d(grid, self.w, self.b))


class ImageDecoder(Module):
    def __init__(self, cfg: SsdConfig, rng: np.random.Generator):
        self.cfg = cfg
        n = (2 * cfg.side) ** 2
        self.pos = param(rng, (n, cfg.channels), 0.02)
        self.blocks = [
            TransformerBlock(cfg.channels, cfg.heads, cfg.ff_mult, rng) for _ in range(cfg.blocks)
        ]
        self.norm = LayerNorm(cfg.channels)
        self.pred = Linear(cfg.channels, cfg.patch * cfg.patch * 3, rng)

    def __call__(self, z_grid: Tensor) -> Tensor:
        B, C, _, _ = z_grid.shape
        up = T.upsample_nearest2d(z_grid, 2)
        g = up.shape[2]
        x = T.add(T.transpose(T.reshape(up, (B, C, g * g)), (0, 2, 1)), self.pos)
        for blk in self.blocks:
            x = blk(x)
        x = self.pred(self.norm(x))
        return T.sigmoid(unpatchify(x, self.cfg.patch, g))


class RegressionHead(Module):
    """conv -> global average pool -> linear -> sigmoid, one scalar per item."""

    def __init__(self, cfg: SsdConfig, rng: np.random.Generator):
        self.w_conv = param(rng, (cfg.head_channels, cfg.channels, 3, 3), math.sqrt(2.0 / (cfg.channels * 9)))
        self.b_conv = zeros((cfg.head_channels,))
        self.W = param(rng, (cfg.head_channels, 1), 1.0 / math.sqrt(cfg.head_channels))
        self.b = zeros((1,))

    def __call__(self, z_grid: Tensor) -> Tensor:
        h = T.relu(T.conv2d(z_grid, self.w_conv, self.b_conv))
        B, C, H, W = h.shape
        pooled = T.mean(T.reshape(h, (B, C, H * W)), axis=-1)
        out = T.sigmoid(T.add(T.matmul(pooled, self.W), self.b))
        return T.reshape(out, (B,))


class Ssd(Module):
    def __init__(self, cfg: SsdConfig, rng: np.random.Generator, tasks=TASKS):
        unknown = set(tasks) - set(TASKS)
        if unknown or not tasks:
            raise ValueError(f"tasks must be a non-empty subset of {TASKS}, got {tasks}")
        self.cfg = cfg
        self.tasks = tuple(t for t in TASKS if t in tasks)
        self.backbone = ToGrid(cfg, rng)
        self.image = ImageDecoder(cfg, rng) if "image" in self.tasks else None
        self.head_theta = RegressionHead(cfg, rng) if "theta" in self.tasks else None
        self.head_v = RegressionHead(cfg, rng) if "v" in self.tasks else None
        self.head_d = RegressionHead(cfg, rng) if "d" in self.tasks else None

    def regression_heads(self, z_grid: Tensor):
        return tuple(
            h(z_grid) if h is not None else None for h in (self.head_theta, self.head_v, self.head_d)
        )

    def __call__(self, e_hat: Tensor) -> SensingOutput:
        z = self.backbone(e_hat)
        m_hat = self.image(z) if self.image is not None else None
        return SensingOutput(m_hat, *self.regression_heads(z))
