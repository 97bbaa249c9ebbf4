"""Command-line entry point: dataset generation, training, evaluation, dumps."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, describe
from .gradcheck import run_suite
from .model import SCHEMES, radar_config
from .phy import (
    BITS_PER_SYMBOL,
    awgn,
    constellation,
    demodulate,
    modulate,
    select_modulation,
)
from .rng import make_rng
from .scene import DatasetManifest, SceneSpec, build_dataset, load_arrays, read_manifest
from .training import (
    TrainConfig,
    average_by_snr,
    build_predictor,
    evaluate,
    load_scheme,
    train_scheme,
    trend_violations,
    write_results,
)

log = logging.getLogger("simac")


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def scene_spec(cfg: RunConfig) -> SceneSpec:
    s = cfg.section("scene")
    return SceneSpec(
        width=s["width"], height=s["height"], n_targets=s["n_targets"],
        background_seed=s["background_seed"], frame_dt=s["frame_dt"], v_max=s["v_max"],
    )


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    return cfg


# ----------------------------------------------------------------- datasets


def train_dir(out: Path) -> Path:
    return out / "data" / "train"


def heldout_dir(out: Path, seed: int) -> Path:
    return out / "data" / f"heldout_{seed}"


def generate(cfg: RunConfig, seed: int, out: Path) -> dict[str, DatasetManifest]:
    spec = scene_spec(cfg)
    radar = radar_config(cfg)
    noise = cfg["data.echo_noise"]
    made = {"train": build_dataset(spec, cfg["data.n_samples"], radar, train_dir(out), seed, noise)}
    for hs in cfg["data.heldout_seeds"]:
        made[f"heldout_{hs}"] = build_dataset(spec, cfg["data.heldout_samples"], radar, heldout_dir(out, hs), hs, noise)
    return made


def _ensure_data(cfg: RunConfig, seed: int, out: Path) -> None:
    needed = [train_dir(out)] + [heldout_dir(out, s) for s in cfg["data.heldout_seeds"]]
    if not all((d / "manifest.csv").exists() for d in needed):
        log.info("dataset missing under %s, generating", out / "data")
        generate(cfg, seed, out)


def load_heldout(out: Path, seeds) -> dict:
    return {s: load_arrays(read_manifest(heldout_dir(out, s))) for s in seeds}


# ----------------------------------------------------------------- commands


def cmd_gen(args, cfg: RunConfig) -> int:
    made = generate(cfg, args.seed, args.out)
    for name, m in made.items():
        print(f"{name}: {len(m)} samples in {m.root}")
    return 0


def run_dir(out: Path, scheme: str) -> Path:
    return out / "runs" / scheme


def _train(cfg: RunConfig, scheme: str, seed: int, out: Path) -> None:
    _ensure_data(cfg, seed, out)
    data = load_arrays(read_manifest(train_dir(out)))
    predictor = build_predictor(cfg, scheme, seed)
    rd = run_dir(out, scheme)
    reports = train_scheme(predictor, data, TrainConfig.from_run(cfg), seed, rd)
    (rd / "run.cfg").write_text(cfg.to_text())
    for name, rep in reports.items():
        first, last = rep.rows[0]["total"], rep.rows[-1]["total"]
        print(f"{scheme}/{name}: loss {first:.4f} -> {last:.4f} in {rep.rows[-1]['seconds']:.0f}s")


def cmd_train(args, cfg: RunConfig) -> int:
    _train(cfg, args.scheme, args.seed, args.out)
    return 0


def _eval(cfg: RunConfig, scheme: str, seed: int, out: Path, snrs, seeds) -> list[dict]:
    predictor = load_scheme(cfg, scheme, seed, run_dir(out, scheme))
    return evaluate(predictor, load_heldout(out, seeds), snrs, scheme, cfg["eval.batch_size"])


def cmd_eval(args, cfg: RunConfig) -> int:
    snrs = _floats(args.snr) if args.snr else list(cfg["eval.snr_list"])
    seeds = _ints(args.seeds) if args.seeds else list(cfg["data.heldout_seeds"])
    rows = _eval(cfg, args.scheme, args.seed, args.out, snrs, seeds)
    path = Path(args.csv) if args.csv else args.out / f"results_{args.scheme}.csv"
    write_results(path, rows)
    for snr, m in average_by_snr(rows).items():
        print(
            f"{snr:5.1f} dB  rmse d {m['rmse_d']:.4f} theta {m['rmse_theta']:.4f} v {m['rmse_v']:.4f}"
            f"  psnr {m['psnr_db']:.2f}  acc {m['accuracy']:.3f}"
        )
    print(f"wrote {path}")
    return 0


def summed_rmse(rows: list[dict]) -> float:
    avg = average_by_snr(rows)
    return float(np.mean([m["rmse_d"] + m["rmse_theta"] + m["rmse_v"] for m in avg.values()]))


def cmd_ablate(args, cfg: RunConfig) -> int:
    schemes = [s.strip() for s in args.schemes.split(",")]
    snrs = list(cfg["eval.snr_list"])
    seeds = list(cfg["data.heldout_seeds"])
    all_rows = []
    totals = {}
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {scheme!r}")
        if args.retrain or not (run_dir(args.out, scheme) / "run.cfg").exists():
            _train(cfg, scheme, args.seed, args.out)
        rows = _eval(cfg, scheme, args.seed, args.out, snrs, seeds)
        all_rows += rows
        totals[scheme] = summed_rmse(rows)
    write_results(args.out / "ablation.csv", all_rows)
    lines = [f"{s}: summed rmse {v:.4f}" for s, v in totals.items()]
    if "simac" in totals and "wo_ssd" in totals:
        ok = totals["wo_ssd"] >= totals["simac"]
        lines.append(f"separate heads >= shared decoder: {'PASS' if ok else 'FAIL'}")
    if "simac" in totals:
        bad = trend_violations(average_by_snr([r for r in all_rows if r["scheme"] == "simac"]))
        lines.append("snr trend: " + ("PASS" if not bad else "FAIL; " + "; ".join(bad)))
    (args.out / "ablation_summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_constellation(args, cfg: RunConfig) -> int:
    scheme = args.modulation or select_modulation(args.snr)
    if scheme not in BITS_PER_SYMBOL:
        raise ConfigError(f"unknown modulation {scheme!r}")
    k = BITS_PER_SYMBOL[scheme]
    bits = make_rng(args.seed, "constellation-bits").integers(0, 2, args.symbols * k).astype(np.uint8)
    rx = awgn(modulate(bits, scheme).symbols, args.snr, args.seed)
    path = Path(args.csv) if args.csv else args.out / f"constellation_{args.snr:g}dB.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["symbol_index", "I", "Q"])
        for i, s in enumerate(rx):
            w.writerow([i, repr(float(s.real)), repr(float(s.imag))])
    errors = int(np.count_nonzero(demodulate(rx, scheme, len(bits)) != bits))
    print(f"{scheme} at {args.snr:g} dB: {len(rx)} symbols, {len(constellation(scheme))} points, bit errors {errors}/{len(bits)}")
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    reports = run_suite(seed=args.seed, probes=args.probes)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.op_name:20s} max rel err {r.max_rel_error:.2e}")
    failed = [r.op_name for r in reports if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_config(args, cfg: RunConfig) -> int:
    print(describe() if args.defaults else cfg.to_text(), end="")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (default 0)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory (default ./simac_out)")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE", help="override one config key")

    p = argparse.ArgumentParser(prog="simac", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="render training and held-out datasets")

    t = sub.add_parser("train", parents=[common], help="train one scheme")
    t.add_argument("--scheme", choices=SCHEMES, default="simac")

    e = sub.add_parser("eval", parents=[common], help="SNR sweep over held-out sets")
    e.add_argument("--scheme", choices=SCHEMES, default="simac")
    e.add_argument("--snr", help="comma-separated SNRs in dB")
    e.add_argument("--seeds", help="comma-separated held-out scene seeds")
    e.add_argument("--csv", help="results path (default <out>/results_<scheme>.csv)")

    a = sub.add_parser("ablate", parents=[common], help="train and compare schemes")
    a.add_argument("--schemes", default=",".join(SCHEMES))
    a.add_argument("--retrain", action="store_true", help="train even if a run exists")

    c = sub.add_parser("constellation", parents=[common], help="dump received symbols")
    c.add_argument("--snr", type=float, required=True)
    c.add_argument("--modulation", help="override the SNR-selected scheme")
    c.add_argument("--symbols", type=int, default=2000)
    c.add_argument("--csv", help="output path")

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    g.add_argument("--probes", type=int, default=10)

    k = sub.add_parser("config", parents=[common], help="print the effective config")
    k.add_argument("--defaults", action="store_true", help="list every key with its meaning")
    return p


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "constellation": cmd_constellation,
    "gradcheck": cmd_gradcheck,
    "config": cmd_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.config = getattr(args, "config", None)
    args.seed = getattr(args, "seed", 0)
    args.out = getattr(args, "out", Path("simac_out"))
    args.set = getattr(args, "set", None)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, OSError, ValueError, KeyError, RuntimeError, ArithmeticError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"simac {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
