"""Digital channel: quantizer, Gray-mapped constellations, AWGN, rate/delay.

Inference uses the discrete chain quantize -> modulate -> AWGN -> demodulate
-> dequantize.  Training uses a differentiable surrogate with Gaussian noise,
clamping and a straight-through quantizer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .rng import make_rng
from .tensor import Tensor

BITS_PER_SYMBOL = {"BPSK": 1, "QPSK": 2, "8PSK": 3, "16QAM": 4}


def select_modulation(snr_db: float) -> str:
    if 0.0 <= snr_db <= 10.0:
        return "BPSK"
    if 10.0 < snr_db <= 18.0:
        return "QPSK"
    if 18.0 < snr_db <= 22.0:
        return "8PSK"
    return "16QAM"


@dataclass(frozen=True)
class CommProfile:
    snr_db: float
    modulation: str | None = None
    bandwidth: float = 1e3
    power: float = 1.0
    gain: float = 1.0

    def __post_init__(self):
        if self.modulation is None:
            object.__setattr__(self, "modulation", select_modulation(self.snr_db))
        if self.modulation not in BITS_PER_SYMBOL:
            raise ValueError(f"unknown modulation {self.modulation!r}")


@dataclass
class SymbolStream:
    symbols: np.ndarray
    bits: np.ndarray
    bits_per_symbol: int
    n_pad: int
    q_bits: int = 8


# ----------------------------------------------------------------- quantizer


def quantize_codes(x: np.ndarray, q: int = 8) -> tuple[np.ndarray, int]:
    """Mid-rise codes in [0, 2^q) and the number of clamped inputs."""
    if not 2 <= q <= 16:
        raise ValueError(f"quantizer depth must be in [2, 16], got {q}")
    x = np.asarray(x, dtype=np.float64)
    n_out = int(np.count_nonzero((x < -1.0) | (x > 1.0)))
    levels = 1 << q
    codes = np.floor((np.clip(x, -1.0, 1.0) + 1.0) * (levels / 2.0)).astype(np.int64)
    return np.minimum(codes, levels - 1), n_out


def dequantize_codes(codes: np.ndarray, q: int = 8) -> np.ndarray:
    step = 2.0 / (1 << q)
    return -1.0 + (np.asarray(codes, dtype=np.float64) + 0.5) * step


def codes_to_bits(codes: np.ndarray, q: int) -> np.ndarray:
    shifts = np.arange(q - 1, -1, -1)
    return ((codes.reshape(-1, 1) >> shifts) & 1).astype(np.uint8).reshape(-1)


def bits_to_codes(bits: np.ndarray, q: int) -> np.ndarray:
    weights = 1 << np.arange(q - 1, -1, -1)
    return bits.reshape(-1, q).astype(np.int64) @ weights


def quantize(x: np.ndarray, q: int = 8) -> np.ndarray:
    """Values in [-1, 1] to an MSB-first bit sequence."""
    codes, n_out = quantize_codes(x, q)
    if n_out:
        warnings.warn(f"quantize: clamped {n_out} values outside [-1, 1]", RuntimeWarning, stacklevel=2)
    return codes_to_bits(codes, q)


def dequantize(bits: np.ndarray, q: int = 8) -> np.ndarray:
    return dequantize_codes(bits_to_codes(np.asarray(bits), q), q)


# ----------------------------------------------------------------- constellations


def _gray(n: int) -> int:
    return n ^ (n >> 1)


@lru_cache(maxsize=None)
def constellation(scheme: str) -> np.ndarray:
    """Point for every bit label, indexed by the label's integer value (MSB first)."""
    if scheme == "BPSK":
        return np.array([1.0 + 0j, -1.0 + 0j])
    if scheme == "QPSK":
        pts = np.empty(4, complex)
        for lab in range(4):
            b0, b1 = lab >> 1, lab & 1
            pts[lab] = complex(1 - 2 * b0, 1 - 2 * b1) / math.sqrt(2)
        return pts
    if scheme == "8PSK":
        pts = np.empty(8, complex)
        for k in range(8):
            pts[_gray(k)] = np.exp(2j * np.pi * k / 8)
        return pts
    if scheme == "16QAM":
        level = {_gray(i): 2 * i - 3 for i in range(4)}  # 00 -3, 01 -1, 11 +1, 10 +3
        pts = np.empty(16, complex)
        for lab in range(16):
            pts[lab] = complex(level[lab >> 2], level[lab & 3]) / math.sqrt(10)
        return pts
    raise ValueError(f"unknown modulation {scheme!r}")


def modulate(bits: np.ndarray, scheme: str, q_bits: int = 8) -> SymbolStream:
    k = BITS_PER_SYMBOL[scheme]
    bits = np.asarray(bits, dtype=np.uint8)
    n_pad = (-len(bits)) % k
    padded = np.concatenate([bits, np.zeros(n_pad, np.uint8)])
    labels = padded.reshape(-1, k).astype(np.int64) @ (1 << np.arange(k - 1, -1, -1))
    return SymbolStream(constellation(scheme)[labels], padded, k, n_pad, q_bits)


def demodulate(symbols: np.ndarray, scheme: str, n_bits: int | None = None) -> np.ndarray:
    """Minimum-distance decisions, unpacked to bits, optionally truncated."""
    pts = constellation(scheme)
    k = BITS_PER_SYMBOL[scheme]
    y = np.asarray(symbols).reshape(-1)
    labels = np.empty(len(y), np.int64)
    chunk = 1 << 16
    for s in range(0, len(y), chunk):
        dist = np.abs(y[s : s + chunk, None] - pts[None, :])
        labels[s : s + chunk] = dist.argmin(axis=1)
    bits = ((labels[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8).reshape(-1)
    return bits if n_bits is None else bits[:n_bits]


def noise_variance(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def awgn(symbols: np.ndarray, snr_db: float, seed) -> np.ndarray:
    """Circular complex Gaussian noise with total variance 10^(-snr/10)."""
    rng = make_rng(seed, "awgn", float(snr_db))
    sigma = math.sqrt(noise_variance(snr_db) / 2.0)
    n = rng.standard_normal((2, len(symbols)))
    return symbols + sigma * (n[0] + 1j * n[1])


# ----------------------------------------------------------------- surrogate


def channel_train(e: Tensor, snr_db: float, rng: np.random.Generator, q: int = 8) -> Tensor:
    """Noisy, clamped, straight-through quantized copy of ``e``."""
    sigma = math.sqrt(noise_variance(snr_db) / 2.0)
    noisy = T.clamp(T.add(e, Tensor(sigma * rng.standard_normal(e.shape))), -1.0, 1.0)
    codes, _ = quantize_codes(noisy.data, q)
    return T.straight_through(noisy, dequantize_codes(codes, q))


# ----------------------------------------------------------------- accounting


def rate_delay(profile: CommProfile, z_bits: int) -> tuple[float, float]:
    if z_bits <= 0:
        raise ValueError("payload must be positive")
    ratio = profile.power * profile.gain / noise_variance(profile.snr_db)
    v = profile.bandwidth * math.log2(1.0 + ratio)
    return v, z_bits / v


@dataclass
class TransmitResult:
    e_hat: np.ndarray
    symbols: np.ndarray  # post-noise
    rate: float
    t_com: float  # per sample
    bit_errors: int
    n_bits: int


def transmit(e: np.ndarray, profile: CommProfile, seed, q: int = 8) -> TransmitResult:
    """Discrete inference path over a batch; delay is per sample payload."""
    e = np.asarray(e, dtype=np.float64)
    codes, n_out = quantize_codes(e, q)
    if n_out:
        warnings.warn(f"transmit: clamped {n_out} values outside [-1, 1]", RuntimeWarning, stacklevel=2)
    bits = codes_to_bits(codes, q)
    stream = modulate(bits, profile.modulation, q)
    rx = awgn(stream.symbols, profile.snr_db, seed)
    bits_hat = demodulate(rx, profile.modulation, len(bits))
    e_hat = dequantize_codes(bits_to_codes(bits_hat, q), q).reshape(e.shape)
    per_sample = int(np.prod(e.shape[1:])) * q if e.ndim > 1 else e.size * q
    v, t_com = rate_delay(profile, per_sample)
    return TransmitResult(e_hat, rx, v, t_com, int(np.count_nonzero(bits != bits_hat)), len(bits))
