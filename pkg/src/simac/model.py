"""The full sensing-communication pipeline and its ablation variants."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .layers import Module, load_checkpoint, save_checkpoint
from .lse import ConditionText, Lse, LseConfig, tokenize
from .msf import Msf, MsfConfig
from .phy import CommProfile, TransmitResult, channel_train, select_modulation, transmit
from .radar import RadarConfig
from .rng import make_rng
from .scene import SampleArrays
from .ssd import TASKS, SensingOutput, Ssd, SsdConfig
from .tensor import Tensor, no_grad

SCHEMES = ("simac", "wo_lse", "wo_ssd")
CONSTANT_CONDITION = ""


def radar_config(cfg: RunConfig) -> RadarConfig:
    return RadarConfig(**cfg.section("radar"))


def msf_config(cfg: RunConfig) -> MsfConfig:
    radar = radar_config(cfg)
    return MsfConfig(
        K=radar.K, L_sig=radar.L_sig, image_size=cfg["scene.width"], **cfg.section("msf")
    )


def lse_config(cfg: RunConfig) -> LseConfig:
    s = cfg.section("lse")
    return LseConfig(d=cfg["msf.d"], L_s=cfg["msf.L_s"], **s)


def ssd_config(cfg: RunConfig) -> SsdConfig:
    lse = lse_config(cfg)
    return SsdConfig(
        L_fusion=lse.L_fusion,
        in_ch=lse.d // 2,
        patch=cfg["msf.patch"],
        image_size=cfg["scene.width"],
        **cfg.section("ssd"),
    )


def condition_text(snr_db: float, live: bool = True) -> str:
    return ConditionText(snr_db, select_modulation(snr_db)).rendered if live else CONSTANT_CONDITION


@dataclass
class Prediction:
    m_hat: np.ndarray | None
    theta: np.ndarray | None
    v: np.ndarray | None
    d: np.ndarray | None
    tx: TransmitResult


class SimacModel(Module):
    def __init__(self, cfg: RunConfig, seed: int, tasks=TASKS, use_condition: bool = True):
        if cfg["scene.width"] != cfg["scene.height"]:
            raise ValueError("the model needs square images")
        rng = make_rng(seed, "init", *tasks)
        self.run_cfg = cfg
        self.use_condition = use_condition
        self.lse_cfg = lse_config(cfg)
        self.msf = Msf(msf_config(cfg), rng, radar_config(cfg))
        self.lse = Lse(self.lse_cfg, rng)
        self.ssd = Ssd(ssd_config(cfg), rng, tasks)
        self.tasks = self.ssd.tasks
        self.q_bits = cfg["phy.q_bits"]

    def encode(self, batch: SampleArrays, snr_db: float) -> Tensor:
        s_mul = self.msf(Tensor(batch.echo_real), Tensor(batch.echo_imag), Tensor(batch.images))
        text = condition_text(snr_db, self.use_condition)
        tokens = tokenize([text] * len(batch), self.lse_cfg.L_w)
        return self.lse(s_mul, tokens)

    def forward_train(self, batch: SampleArrays, snr_db: float, rng: np.random.Generator) -> SensingOutput:
        e = self.encode(batch, snr_db)
        return self.ssd(channel_train(e, snr_db, rng, self.q_bits))

    def predict(self, batch: SampleArrays, snr_db: float, seed) -> Prediction:
        profile = CommProfile(
            snr_db, bandwidth=self.run_cfg["phy.bandwidth"], power=self.run_cfg["phy.power"]
        )
        with no_grad():
            e = self.encode(batch, snr_db)
            tx = transmit(e.data, profile, seed, self.q_bits)
            out = self.ssd(Tensor(tx.e_hat))
        pick = lambda t: None if t is None else t.data.copy()  # noqa: E731
        return Prediction(pick(out.m_hat), pick(out.theta), pick(out.v), pick(out.d), tx)

    def save(self, prefix: str | Path) -> None:
        save_checkpoint(prefix, self.state_dict())

    def load(self, prefix: str | Path) -> None:
        self.load_state_dict(load_checkpoint(prefix))


class SeparateHeads:
    """Ablation without a shared decoder: one single-task model per output."""

    def __init__(self, models: dict[str, SimacModel]):
        if set(models) != set(TASKS):
            raise ValueError(f"need one model per task {TASKS}")
        self.models = models

    def predict(self, batch: SampleArrays, snr_db: float, seed) -> Prediction:
        preds = {t: m.predict(batch, snr_db, seed) for t, m in self.models.items()}
        return Prediction(
            preds["image"].m_hat, preds["theta"].theta, preds["v"].v, preds["d"].d, preds["image"].tx
        )
