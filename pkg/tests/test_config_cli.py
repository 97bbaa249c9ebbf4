import csv

import numpy as np
import pytest

from simac.cli import main
from simac.config import REGISTRY, ConfigError, RunConfig, describe
from simac.phy import constellation


def test_defaults_round_trip():
    cfg = RunConfig()
    back = RunConfig.parse(cfg.to_text())
    assert back.values == cfg.values


def test_unknown_key_and_bad_value_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig({"train.epoch": 3})
    with pytest.raises(ConfigError, match="bad value"):
        RunConfig().set("train.epochs", "three")
    with pytest.raises(ConfigError, match="cfg:2"):
        RunConfig.parse("train.epochs = 2\nnope\n", "cfg")


def test_config_file_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ntrain.lr = 0.001  # inline\neval.snr_list = 0, 25\nmsf.dechirp = false\n")
    cfg = RunConfig.load(p)
    assert cfg["train.lr"] == 1e-3
    assert cfg["eval.snr_list"] == (0.0, 25.0)
    assert cfg["msf.dechirp"] is False
    assert cfg.section("train")["lr"] == 1e-3


def test_describe_lists_every_key():
    lines = describe().splitlines()
    assert len(lines) == len(REGISTRY)


def test_cli_gradcheck_exit_zero(capsys, tmp_path):
    assert main(["gradcheck", "--probes", "3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "signal_extractor" in out


def test_cli_constellation_clusters(tmp_path, capsys):
    path = tmp_path / "c.csv"
    assert main(["constellation", "--snr", "20", "--csv", str(path), "--out", str(tmp_path)]) == 0
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["symbol_index", "I", "Q"]
    pts = np.array([complex(float(r["I"]), float(r["Q"])) for r in rows])
    ideal = constellation("8PSK")
    nearest = np.argmin(np.abs(pts[:, None] - ideal[None, :]), axis=1)
    # 8 clusters, each tight around its ideal point
    assert len(set(nearest.tolist())) == 8
    assert np.max(np.abs(pts - ideal[nearest])) < 0.5
    assert "8PSK" in capsys.readouterr().out


def test_cli_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--scheme", "nope"])
    assert exc.value.code == 2
    assert main(["config", "--set", "bogus.key=1", "--out", str(tmp_path)]) == 1
    assert "unknown config key" in capsys.readouterr().err
    assert main(["eval", "--out", str(tmp_path / "empty")]) == 1
    assert "run train first" in capsys.readouterr().err


def test_cli_gen_train_eval(tmp_path, capsys):
    out = tmp_path / "o"
    common = [
        "--out", str(out),
        "--set", "data.n_samples=8", "--set", "data.heldout_samples=4",
        "--set", "data.heldout_seeds=11,12", "--set", "train.epochs=1", "--set", "train.batch_size=4",
    ]
    assert main(["gen", *common]) == 0
    assert (out / "data" / "heldout_12" / "manifest.csv").exists()
    assert main(["train", *common]) == 0
    assert (out / "runs" / "simac" / "model.idx").exists()
    csv_path = tmp_path / "r.csv"
    assert main(["eval", *common, "--snr", "0,25", "--csv", str(csv_path)]) == 0
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["snr_db"], r["scene_seed"]) for r in rows] == [
        ("0.0", "11"), ("0.0", "12"), ("25.0", "11"), ("25.0", "12"),
    ]
    # global flags also work before the subcommand
    assert main(["--out", str(out), "config"]) == 0
    assert "train.epochs = 30" in capsys.readouterr().out
