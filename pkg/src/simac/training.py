"""Multi-task training loop, evaluation sweep and their CSV outputs."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .layers import Adam
from .metrics import accuracy_from_psnr, psnr, rmse, ssim
from .model import SeparateHeads, SimacModel
from .phy import select_modulation
from .rng import make_rng
from .scene import SampleArrays, iterate_batches
from .ssd import TASKS, SensingOutput
from .tensor import NumericFault, Tensor

log = logging.getLogger(__name__)

REPORT_HEADER = ["epoch", "total", "l_sr", "l_ap", "l_vp", "l_dp", "seconds"]
RESULTS_HEADER = [
    "scheme", "scene_seed", "snr_db", "modulation", "rmse_d", "rmse_theta", "rmse_v",
    "psnr_db", "ssim", "accuracy", "mean_tcom_s",
]
LABEL_COLUMN = {"d": 0, "theta": 1, "v": 2}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 3e-4
    beta2: float = 0.999
    l1: float = 100.0
    l2: float = 1.0
    l3: float = 1.0
    l4: float = 1.0
    snr_min: float = 0.0
    snr_max: float = 25.0
    checkpoint_every: int = 0

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "TrainConfig":
        return cls(**cfg.section("train"))


@dataclass
class TrainReport:
    rows: list[dict] = field(default_factory=list)

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow([r["epoch"]] + [f"{r[k]:.10g}" for k in REPORT_HEADER[1:]])


def mtl_loss(out: SensingOutput, crops: np.ndarray, labels: np.ndarray, cfg: TrainConfig):
    """l1*L1(image) + l2*MSE(theta) + l3*MSE(v) + l4*MSE(d); absent heads add 0."""
    parts: dict[str, Tensor | None] = {"l_sr": None, "l_ap": None, "l_vp": None, "l_dp": None}
    if out.m_hat is not None:
        if out.m_hat.shape != crops.shape:
            raise T.ShapeError(f"image {out.m_hat.shape} vs label {crops.shape}")
        parts["l_sr"] = T.mean(T.absolute(T.sub(out.m_hat, Tensor(crops))))
    for key, pred, col in (("l_ap", out.theta, 1), ("l_vp", out.v, 2), ("l_dp", out.d, 0)):
        if pred is not None:
            parts[key] = T.mean(T.square(T.sub(pred, Tensor(labels[:, col]))))
    weights = {"l_sr": cfg.l1, "l_ap": cfg.l2, "l_vp": cfg.l3, "l_dp": cfg.l4}
    total = None
    for key, term in parts.items():
        if term is None:
            continue
        weighted = T.scale(term, weights[key])
        total = weighted if total is None else T.add(total, weighted)
    if total is None:
        raise ValueError("no outputs to score")
    values = {k: (0.0 if v is None else float(v.data)) for k, v in parts.items()}
    return total, values


def train(
    model: SimacModel,
    data: SampleArrays,
    cfg: TrainConfig,
    seed: int,
    checkpoint_prefix: str | Path | None = None,
) -> TrainReport:
    opt = Adam(model.parameters(), lr=cfg.lr, betas=(0.9, cfg.beta2))
    report = TrainReport()
    start = time.perf_counter()
    tag = "-".join(model.tasks)
    for epoch in range(1, cfg.epochs + 1):
        sums = dict.fromkeys(REPORT_HEADER[1:6], 0.0)
        n_seen = 0
        batches = iterate_batches(data, cfg.batch_size, shuffle_seed=int(make_rng(seed, "order", tag, epoch).integers(2**62)))
        for step, batch in enumerate(batches):
            rng = make_rng(seed, "step", tag, epoch, step)
            snr = float(rng.uniform(cfg.snr_min, cfg.snr_max))
            try:
                out = model.forward_train(batch, snr, rng)
                loss, parts = mtl_loss(out, batch.crops, batch.labels, cfg)
                opt.zero_grad()
                loss.backward()
            except NumericFault as exc:
                raise TrainingError(f"epoch {epoch} step {step} (snr {snr:.2f} dB): {exc}") from exc
            opt.step()
            n = len(batch)
            n_seen += n
            sums["total"] += float(loss.data) * n
            for k, v in parts.items():
                sums[k] += v * n
        row = {"epoch": epoch, **{k: v / n_seen for k, v in sums.items()}}
        row["seconds"] = time.perf_counter() - start
        report.rows.append(row)
        log.info("epoch %d total %.4f (%.1fs)", epoch, row["total"], row["seconds"])
        if checkpoint_prefix and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            model.save(f"{checkpoint_prefix}_epoch{epoch:03d}")
    if checkpoint_prefix:
        model.save(checkpoint_prefix)
    return report


# ----------------------------------------------------------------- evaluation


def _fmt(x: float) -> str:
    return repr(float(x))


def evaluate_set(
    predictor: SimacModel | SeparateHeads,
    data: SampleArrays,
    snr_db: float,
    noise_seed: int,
    batch_size: int = 64,
) -> dict:
    preds = {k: [] for k in ("theta", "v", "d")}
    psnrs, ssims, tcoms = [], [], []
    for i, batch in enumerate(iterate_batches(data, batch_size)):
        p = predictor.predict(batch, snr_db, int(make_rng(noise_seed, "channel", i).integers(2**62)))
        for k in preds:
            preds[k].append(getattr(p, k))
        if p.m_hat is not None:
            for m_hat, m in zip(p.m_hat, batch.crops):
                psnrs.append(psnr(m_hat * 255.0, m * 255.0))
                ssims.append(ssim(m_hat * 255.0, m * 255.0))
        tcoms.append(p.tx.t_com)
    # metrics of heads the predictor lacks are reported as nan
    image = bool(psnrs)
    row = {
        "snr_db": snr_db,
        "modulation": select_modulation(snr_db),
        "psnr_db": float(np.mean(psnrs)) if image else math.nan,
        "ssim": float(np.mean(ssims)) if image else math.nan,
        "accuracy": accuracy_from_psnr(psnrs) if image else math.nan,
        "mean_tcom_s": float(np.mean(tcoms)),
    }
    for k, col in LABEL_COLUMN.items():
        have = preds[k][0] is not None
        row[f"rmse_{k}"] = rmse(np.concatenate(preds[k]), data.labels[:, col]) if have else math.nan
    return row


def evaluate(
    predictor: SimacModel | SeparateHeads,
    heldout: dict[int, SampleArrays],
    snr_list,
    scheme: str,
    batch_size: int = 64,
) -> list[dict]:
    """One row per (snr, held-out seed); the seed also drives channel noise."""
    rows = []
    for snr in snr_list:
        for seed, data in heldout.items():
            row = evaluate_set(predictor, data, float(snr), seed, batch_size)
            rows.append({"scheme": scheme, "scene_seed": seed, **row})
    return rows


def write_results(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow(
                [r["scheme"], r["scene_seed"], _fmt(r["snr_db"]), r["modulation"]]
                + [_fmt(r[k]) for k in RESULTS_HEADER[4:]]
            )


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["scene_seed"] = int(r["scene_seed"])
        for k in RESULTS_HEADER[2:]:
            if k != "modulation":
                r[k] = float(r[k])
    return rows


def average_by_snr(rows: list[dict]) -> dict[float, dict[str, float]]:
    """Mean of each metric over held-out seeds at every SNR."""
    out: dict[float, dict[str, float]] = {}
    for snr in sorted({r["snr_db"] for r in rows}):
        sel = [r for r in rows if r["snr_db"] == snr]
        out[snr] = {k: float(np.mean([r[k] for r in sel])) for k in RESULTS_HEADER[4:]}
    return out


def trend_violations(avg: dict[float, dict[str, float]], rmse_slack: float = 0.02, psnr_slack: float = 0.5) -> list[str]:
    """Cases where quality drops as SNR rises beyond the allowed slack."""
    snrs = sorted(avg)
    bad = []
    if avg[snrs[-1]]["psnr_db"] < avg[snrs[0]]["psnr_db"] - psnr_slack:
        bad.append(f"psnr {avg[snrs[-1]]['psnr_db']:.2f} dB at {snrs[-1]} below {avg[snrs[0]]['psnr_db']:.2f} dB at {snrs[0]}")
    for k in ("rmse_d", "rmse_theta", "rmse_v"):
        for lo, hi in zip(snrs, snrs[1:]):
            if avg[hi][k] > avg[lo][k] + rmse_slack:
                bad.append(f"{k} rises from {avg[lo][k]:.4f} at {lo} dB to {avg[hi][k]:.4f} at {hi} dB")
    return bad


def build_predictor(cfg: RunConfig, scheme: str, seed: int):
    if scheme == "simac":
        return SimacModel(cfg, seed)
    if scheme == "wo_lse":
        return SimacModel(cfg, seed, use_condition=False)
    if scheme == "wo_ssd":
        return SeparateHeads({t: SimacModel(cfg, seed, tasks=(t,)) for t in TASKS})
    raise ValueError(f"unknown scheme {scheme!r}")


def members(predictor) -> dict[str, SimacModel]:
    """Checkpoint name for each trainable model inside a predictor."""
    if isinstance(predictor, SeparateHeads):
        return {f"model_{t}": m for t, m in predictor.models.items()}
    return {"model": predictor}


def train_scheme(predictor, data: SampleArrays, cfg: TrainConfig, seed: int, run_dir: str | Path) -> dict[str, TrainReport]:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    reports = {}
    for name, model in members(predictor).items():
        rep = train(model, data, cfg, seed, run_dir / name)
        suffix = "" if name == "model" else name[len("model"):]
        rep.write(run_dir / f"train_report{suffix}.csv")
        reports[name] = rep
    return reports


def load_scheme(cfg: RunConfig, scheme: str, seed: int, run_dir: str | Path):
    predictor = build_predictor(cfg, scheme, seed)
    for name, model in members(predictor).items():
        prefix = Path(run_dir) / name
        if not prefix.with_suffix(".idx").exists():
            raise FileNotFoundError(f"no checkpoint at {prefix}.bin/.idx; run train first")
        model.load(prefix)
    return predictor
