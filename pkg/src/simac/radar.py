"""SIMO LFM radar echo synthesis and classical estimators.

The echo for one target is

    A[k, t] = lam * a_k(theta) * exp(j 2 pi mu t) * s(t - tau)

with lam = xi * rho / ((4 pi)^(3/2) d^2), xi = c / (fc + Kt),
tau = 2 d / c and mu = 2 (fc + Kt / 2) v / c.  ``xi`` and ``mu`` add a
frequency (Hz) to a chirp slope (Hz/s); the expressions are kept as written
and ``Kt`` is always given in Hz/s.

The classical estimators are test oracles only; the network never sees them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

C_LIGHT = 3e8

_HEADER = struct.Struct("<10d")


class RadarError(ValueError):
    pass


@dataclass(frozen=True)
class RadarConfig:
    fc: float = 10e9
    Tr: float = 1e-4
    Fs: float = 60e6
    K: int = 10
    Kt: float = 3e11
    rho: float = 100.0
    decimation: int = 4

    def __post_init__(self):
        n = self.Fs * self.Tr
        if abs(n - round(n)) > 1e-6 or round(n) < 64:
            raise RadarError(f"Fs*Tr must be an integer >= 64, got {n}")
        if self.K < 2:
            raise RadarError(f"need at least 2 antennas, got K={self.K}")
        if self.decimation < 1 or round(n) % self.decimation:
            raise RadarError(
                f"decimation {self.decimation} must divide sample count {round(n)}"
            )

    @property
    def n_samples(self) -> int:
        return int(round(self.Fs * self.Tr))

    @property
    def L_sig(self) -> int:
        return self.n_samples // self.decimation

    @property
    def dt(self) -> float:
        """Sample spacing after decimation."""
        return self.decimation / self.Fs

    @property
    def xi(self) -> float:
        return C_LIGHT / (self.fc + self.Kt)

    @property
    def range_bin(self) -> float:
        return C_LIGHT / (2.0 * self.Fs / self.decimation)

    @property
    def doppler_bin(self) -> float:
        """Velocity spanned by one 1/Tr Doppler bin."""
        return 1.0 / (self.Tr * (self.fc + self.Kt / 2) * 2.0 / C_LIGHT)


@dataclass(frozen=True)
class TargetState:
    d: float
    theta: float
    v: float

    def __post_init__(self):
        if not self.d > 0:
            raise RadarError(f"distance must be positive, got {self.d}")
        if not 0.0 < self.theta < math.pi:
            raise RadarError(f"theta must lie in (0, pi), got {self.theta}")


@dataclass(frozen=True)
class EchoFrame:
    real: np.ndarray
    imag: np.ndarray
    config: RadarConfig
    truth: TargetState

    @property
    def complex(self) -> np.ndarray:
        return self.real + 1j * self.imag


def time_grid(cfg: RadarConfig) -> np.ndarray:
    return np.arange(cfg.n_samples)[:: cfg.decimation] / cfg.Fs


def lfm_waveform(cfg: RadarConfig) -> np.ndarray:
    """Unit-amplitude baseband up-chirp exp(j pi Kt t^2) on the decimated grid."""
    t = time_grid(cfg)
    return np.exp(1j * np.pi * cfg.Kt * t * t)


def steering_vector(theta: float, K: int) -> np.ndarray:
    k = np.arange(K)
    a = np.exp(-1j * k * np.pi * math.cos(theta))
    a[0] = 1.0
    return a


def path_gain(d: float, cfg: RadarConfig) -> float:
    return cfg.rho * _unit_gain(d, cfg)


def _unit_gain(d: float, cfg: RadarConfig) -> float:
    return cfg.xi / ((4 * math.pi) ** 1.5 * d * d)


def doppler_shift(v: float, cfg: RadarConfig) -> float:
    return 2.0 * (cfg.fc + cfg.Kt / 2) * v / C_LIGHT


def synth_echo(
    state: TargetState,
    cfg: RadarConfig,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> EchoFrame:
    tau = 2.0 * state.d / C_LIGHT
    if tau >= cfg.Tr:
        raise RadarError(
            f"delay {tau:.3e}s for d={state.d} m falls outside the {cfg.Tr:.1e}s window"
        )
    t = time_grid(cfg)
    mu = doppler_shift(state.v, cfg)
    shifted = t - tau
    pulse = np.where(shifted >= 0, np.exp(1j * np.pi * cfg.Kt * shifted * shifted), 0)
    row = np.exp(2j * np.pi * mu * t) * pulse
    # rho multiplies last so the echo scales with it up to one rounding
    A = cfg.rho * (_unit_gain(state.d, cfg) * steering_vector(state.theta, cfg.K)[:, None] * row[None, :])
    if noise_std > 0:
        if rng is None:
            raise RadarError("receiver noise requested without a generator")
        A = A + noise_std * (
            rng.standard_normal(A.shape) + 1j * rng.standard_normal(A.shape)
        ) / math.sqrt(2)
    return EchoFrame(np.ascontiguousarray(A.real), np.ascontiguousarray(A.imag), cfg, state)


def classical_estimate(frame: EchoFrame) -> TargetState:
    """Recover (d, theta, v) from a noiseless frame.

    theta comes from the mean adjacent-antenna phase ratio, d from the
    leading edge of the pulse support.  For v the chirp is removed using a
    delay refined from the echo amplitude (noiseless frames carry lam
    exactly), and the Doppler tone is located by a zero-padded DFT peak.
    """
    cfg = frame.config
    A = frame.complex
    mag = np.abs(A[0])
    if not np.any(mag > 0):
        raise RadarError("cannot estimate from an all-zero frame")

    ratio = np.sum(A[1:] * np.conj(A[:-1]))
    theta = math.acos(float(np.clip(-np.angle(ratio) / np.pi, -1.0, 1.0)))

    support = mag > 0
    k0 = int(np.argmax(support))
    d_edge = C_LIGHT * k0 * cfg.dt / 2.0

    lam = float(np.mean(np.abs(A[:, support])))
    d_amp = math.sqrt(cfg.xi * cfg.rho / ((4 * math.pi) ** 1.5 * lam))
    tau = 2.0 * d_amp / C_LIGHT
    t = time_grid(cfg)[support]
    chirp = np.exp(1j * np.pi * cfg.Kt * (t - tau) ** 2)
    tone = np.sum(A[:, support] * np.conj(steering_vector(theta, cfg.K))[:, None], axis=0)
    tone = tone / chirp
    nfft = 1 << int(math.ceil(math.log2(len(tone) * 16)))
    spec = np.abs(np.fft.fft(tone, nfft))
    freqs = np.fft.fftfreq(nfft, d=cfg.dt)
    mu = float(freqs[int(np.argmax(spec))])
    v = mu * C_LIGHT / (2.0 * (cfg.fc + cfg.Kt / 2))
    return TargetState(d=max(d_edge, 1e-9), theta=theta, v=v)


def write_echo(path: str | Path, frame: EchoFrame) -> None:
    cfg, s = frame.config, frame.truth
    K, L = frame.real.shape
    header = _HEADER.pack(K, L, cfg.fc, cfg.Tr, cfg.Fs, cfg.Kt, cfg.rho, s.d, s.theta, s.v)
    body = np.concatenate([frame.real.ravel(), frame.imag.ravel()]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_echo(path: str | Path) -> EchoFrame:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise RadarError(f"{path}: truncated echo header")
    K, L, fc, Tr, Fs, Kt, rho, d, theta, v = _HEADER.unpack_from(raw)
    K, L = int(K), int(L)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * K * L:
        raise RadarError(f"{path}: expected {2 * K * L} samples, found {body.size}")
    decimation = int(round(Fs * Tr / L))
    cfg = RadarConfig(fc=fc, Tr=Tr, Fs=Fs, K=K, Kt=Kt, rho=rho, decimation=decimation)
    real = body[: K * L].reshape(K, L).astype(np.float64)
    imag = body[K * L :].reshape(K, L).astype(np.float64)
    return EchoFrame(real, imag, cfg, TargetState(d, theta, v))
