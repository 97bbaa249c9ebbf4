"""Flat ``key = value`` run configuration validated against a key registry."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


REGISTRY: dict[str, Key] = {
    # scene and corpus
    "scene.width": Key(int, 32, "image width in pixels"),
    "scene.height": Key(int, 32, "image height in pixels"),
    "scene.n_targets": Key(int, 1, "cars per scene, one sample per car"),
    "scene.background_seed": Key(int, 0, "seed of the fixed background texture"),
    "scene.frame_dt": Key(float, 1.0, "seconds between the two frames"),
    "scene.v_max": Key(float, 20.0, "speed normalizer in px/s"),
    "data.n_samples": Key(int, 512, "training samples"),
    "data.heldout_samples": Key(int, 64, "samples per held-out set"),
    "data.heldout_seeds": Key(_ints, (1001, 1002, 1003), "scene seeds of the held-out sets"),
    "data.echo_noise": Key(float, 0.0, "receiver noise std added to echoes"),
    # radar
    "radar.fc": Key(float, 10e9, "carrier frequency in Hz"),
    "radar.Tr": Key(float, 1e-4, "pulse window in s"),
    "radar.Fs": Key(float, 60e6, "sampling rate in Hz"),
    "radar.K": Key(int, 10, "receive antennas"),
    "radar.Kt": Key(float, 3e11, "chirp slope in Hz/s"),
    "radar.rho": Key(float, 100.0, "radar cross-section"),
    "radar.decimation": Key(int, 4, "keep every n-th sample"),
    # fusion
    "msf.L_s": Key(int, 12, "semantic sequence length"),
    "msf.d": Key(int, 32, "semantic feature size"),
    "msf.conv_channels": Key(_ints, (8, 16, 16), "complex conv output channels"),
    "msf.conv_kernel": Key(int, 7, "complex conv kernel length"),
    "msf.pools": Key(_ints, (5, 5, 5), "complex max-pool windows"),
    "msf.patch": Key(int, 4, "image patch side"),
    "msf.vis_dim": Key(int, 32, "vision token size"),
    "msf.S": Key(int, 4, "routing regions per side"),
    "msf.h": Key(int, 2, "routed regions per query region"),
    "msf.bra_depth": Key(int, 1, "routing attention blocks"),
    "msf.dechirp": Key(_bool, True, "fixed dechirp front end on the echo"),
    "msf.ref_distance": Key(float, 10.0, "distance in m given unit echo gain"),
    "msf.lag": Key(int, 0, "lag in samples of the lag-product channels, 0 to disable"),
    "msf.normalize": Key(_bool, False, "unit-power echo plus a range channel"),
    "msf.pair": Key(_bool, False, "adjacent-antenna product channels"),
    "msf.raw": Key(_bool, True, "pass the dechirped echo itself to the convolutions"),
    # condition encoder
    "lse.L_w": Key(int, 12, "word slots before compression"),
    "lse.L_t": Key(int, 4, "condition positions after compression"),
    "lse.blocks": Key(int, 2, "transformer blocks"),
    "lse.heads": Key(int, 2, "attention heads"),
    "lse.ff_mult": Key(int, 2, "feedforward expansion"),
    # decoder
    "ssd.channels": Key(int, 64, "backbone channels and decoder token size"),
    "ssd.blocks": Key(int, 2, "decoder transformer blocks"),
    "ssd.heads": Key(int, 2, "decoder attention heads"),
    "ssd.ff_mult": Key(int, 2, "decoder feedforward expansion"),
    "ssd.head_channels": Key(int, 16, "regression head conv channels"),
    # channel
    "phy.q_bits": Key(int, 8, "quantizer depth"),
    "phy.bandwidth": Key(float, 1e3, "bandwidth in Hz"),
    "phy.power": Key(float, 1.0, "transmit power in W"),
    # training and evaluation
    "train.epochs": Key(int, 30, "passes over the corpus"),
    "train.batch_size": Key(int, 32, "samples per step"),
    "train.lr": Key(float, 3e-4, "Adam step size"),
    "train.beta2": Key(float, 0.999, "Adam second-moment decay"),
    "train.l1": Key(float, 100.0, "image reconstruction loss weight"),
    "train.l2": Key(float, 1.0, "angle loss weight"),
    "train.l3": Key(float, 1.0, "speed loss weight"),
    "train.l4": Key(float, 1.0, "distance loss weight"),
    "train.snr_min": Key(float, 0.0, "lowest training SNR in dB"),
    "train.snr_max": Key(float, 25.0, "highest training SNR in dB"),
    "train.checkpoint_every": Key(int, 0, "epochs between checkpoints, 0 for final only"),
    "eval.snr_list": Key(_floats, (0.0, 10.0, 15.0, 20.0, 25.0), "evaluation SNRs in dB"),
    "eval.batch_size": Key(int, 64, "samples per inference batch"),
}


def _render(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


class RunConfig:
    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: spec.default for k, spec in REGISTRY.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: Any) -> None:
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            try:
                value = REGISTRY[key].parse(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
        self.values[key] = value

    def __getitem__(self, key: str) -> Any:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def section(self, prefix: str) -> dict[str, Any]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{n}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.parse(Path(path).read_text(), str(path))

    def to_text(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.values.items())


def describe() -> str:
    """One line per key: name, default, meaning."""
    return "".join(f"{k} = {_render(s.default)}  # {s.doc}\n" for k, s in REGISTRY.items())
