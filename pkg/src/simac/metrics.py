"""Sensing and reconstruction quality metrics."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

MAX_PIXEL = 255.0
PSNR_CAP = 99.0
ACCURACY_THRESHOLD_DB = 15.0
_LUMA = np.array([0.299, 0.587, 0.114])


def rmse(x_hat, x) -> float:
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("rmse of an empty set")
    if x_hat.shape != x.shape:
        raise ValueError(f"rmse: length mismatch {x_hat.shape} vs {x.shape}")
    return math.sqrt(float(np.sum((x_hat - x) ** 2)) / x.size)


def psnr(m_hat, m) -> float:
    """PSNR in dB from the mean squared pixel error, capped at 99 dB."""
    m_hat = np.asarray(m_hat, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m_hat.shape != m.shape:
        raise ValueError(f"psnr: shape mismatch {m_hat.shape} vs {m.shape}")
    mse = float(np.mean((m_hat - m) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(MAX_PIXEL**2 / mse))


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img @ _LUMA if img.ndim == 3 and img.shape[-1] == 3 else img


def ssim(m_hat, m) -> float:
    """Single-window SSIM over the whole grayscale image."""
    a = to_gray(m_hat)
    b = to_gray(m)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    c1 = (0.01 * MAX_PIXEL) ** 2
    c2 = (0.03 * MAX_PIXEL) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = float(np.mean((a - mu_a) * (b - mu_b)))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def accuracy(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> float:
    """Fraction of (m_hat, m) pairs with PSNR of at least 15 dB."""
    scores = [psnr(a, b) for a, b in pairs]
    if not scores:
        raise ValueError("accuracy needs at least one pair")
    return sum(s >= ACCURACY_THRESHOLD_DB for s in scores) / len(scores)


def accuracy_from_psnr(values: Iterable[float]) -> float:
    values = list(values)
    if not values:
        raise ValueError("accuracy needs at least one value")
    return sum(v >= ACCURACY_THRESHOLD_DB for v in values) / len(values)
