import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lossmix import cli
from lossmix.config import verify_artifact_hash

SMALL = """
[data]
n_pairs = 12
n_test = 4
duration = 0.25

[train]
epochs = 2
batch_size = 4
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_train_writes_artifacts_deterministically(tmp_path, cfg_file, capsys):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--config", cfg_file, "--out", out_a) == 0
    assert run("train", "--config", cfg_file, "--out", out_b) == 0
    run_dir = "train-learnable-loss-mixup-s0"
    a = (out_a / run_dir / "epochs.jsonl").read_bytes()
    assert a == (out_b / run_dir / "epochs.jsonl").read_bytes()
    assert len(a.splitlines()) == 2 and b"\r" not in a
    summary = json.loads((out_a / run_dir / "summary.json").read_text())
    assert len(summary["summary"]["mean_phi_at_quartiles"]) == 3
    assert summary["config"]["epochs"] == 2
    for name in ("epochs.jsonl", "summary.json", "checkpoint.json"):
        assert verify_artifact_hash(out_a / run_dir / name)
    assert "val LSD" in capsys.readouterr().out


def test_train_flags_override_config(tmp_path, cfg_file):
    assert run("train", "--config", cfg_file, "--out", tmp_path, "--regime", "erm", "--epochs", 1,
               "--seed", 4) == 0
    summary = json.loads((tmp_path / "train-erm-s4" / "summary.json").read_text())
    assert summary["config"]["epochs"] == 1 and summary["config"]["seed"] == 4
    assert summary["summary"]["mean_phi_at_quartiles"] is None


def test_train_unknown_regime(tmp_path, cfg_file, capsys):
    assert run("train", "--config", cfg_file, "--out", tmp_path, "--regime", "cutmix") == 1
    err = capsys.readouterr().err
    assert "cutmix" in err and "learnable-loss-mixup" in err


def test_config_parse_error_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nepochs = \n")
    assert run("train", "--config", bad, "--out", tmp_path) == 1
    assert "line 2" in capsys.readouterr().err


def test_config_unknown_key(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nepohcs = 3\n")
    assert run("train", "--config", bad, "--out", tmp_path) == 1
    assert "epohcs" in capsys.readouterr().err


def test_gen_data_cache_cycle(tmp_path, cfg_file, capsys):
    assert run("gen-data", "--config", cfg_file, "--out", tmp_path) == 0
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
    assert set(manifest["splits"]) == {"train", "val", "test"}
    assert verify_artifact_hash(tmp_path / "data" / "manifest.json")
    capsys.readouterr()
    assert run("gen-data", "--config", cfg_file, "--out", tmp_path) == 0
    assert "up to date" in capsys.readouterr().out
    assert run("gen-data", "--config", cfg_file, "--out", tmp_path, "--snr", "3,6") == 1
    assert "--force" in capsys.readouterr().err
    assert run("gen-data", "--config", cfg_file, "--out", tmp_path, "--snr", "3,6", "--force") == 0
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
    assert manifest["config"]["snr_list"] == [3.0, 6.0]


def test_train_from_cache_matches_fresh(tmp_path, cfg_file):
    assert run("gen-data", "--config", cfg_file, "--out", tmp_path / "c") == 0
    assert run("train", "--config", cfg_file, "--out", tmp_path / "c", "--data", tmp_path / "c" / "data") == 0
    assert run("train", "--config", cfg_file, "--out", tmp_path / "f") == 0
    rel = "train-learnable-loss-mixup-s0/epochs.jsonl"
    assert (tmp_path / "c" / rel).read_bytes() == (tmp_path / "f" / rel).read_bytes()


def test_missing_cache_is_io_error(tmp_path, cfg_file):
    assert run("train", "--config", cfg_file, "--out", tmp_path, "--data", tmp_path / "nowhere") == 3


def test_mixfn_curves(tmp_path):
    assert run("mixfn", "--out", tmp_path) == 0
    directory = tmp_path / "mixfn"
    manifest = json.loads((directory / "manifest.json").read_text())
    assert manifest["files"] == ["phi_identity.csv", "phi_pow_3.csv", "phi_pow_0.33.csv"]
    identity = np.loadtxt(directory / "phi_identity.csv", delimiter=",", skiprows=1)
    assert identity.shape == (101, 2)
    np.testing.assert_allclose(identity[:, 1], identity[:, 0], atol=1e-6)
    for name in manifest["files"]:
        assert verify_artifact_hash(directory / name)
    convex = np.loadtxt(directory / "phi_pow_3.csv", delimiter=",", skiprows=1)
    slope = np.diff(convex[:, 1]) / np.diff(convex[:, 0])
    assert slope[0] < slope[50]


def test_mixfn_bad_rho(tmp_path, capsys):
    assert run("mixfn", "--out", tmp_path, "--rho", "pow:abc") == 1
    assert "pow" in capsys.readouterr().err


def test_gradcheck_pass_and_injected_bug(tmp_path, capsys):
    assert run("gradcheck", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert all(r["passed"] for r in report["objectives"].values())
    assert len(report["objectives"]) == 5
    capsys.readouterr()
    assert run("gradcheck", "--out", tmp_path, "--inject-bug", "loss-mixup") == 2
    assert "loss-mixup" in capsys.readouterr().err


def test_ablate(tmp_path, cfg_file):
    assert run("ablate", "--config", cfg_file, "--out", tmp_path, "--seeds", 2, "--epochs", 1) == 0
    lines = (tmp_path / "ablation" / "ablation.csv").read_text().splitlines()
    rows = list(csv.DictReader([l for l in lines if not l.startswith("#")]))
    assert len(rows) == 8
    assert any(l.startswith("# config_hash=") for l in lines)
    payload = json.loads((tmp_path / "ablation" / "ablation.json").read_text())
    assert len(payload["aggregates"]) == 4
    assert verify_artifact_hash(tmp_path / "ablation" / "ablation.csv")


def test_out_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LOSSMIX_OUT", str(tmp_path / "env"))
    assert run("mixfn", "--rho", "identity", "--points", 3) == 0
    assert (tmp_path / "env" / "mixfn" / "phi_identity.csv").read_text() == "lambda,phi\n0,0\n0.5,0.5\n1,1\n"


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--epochs", "many"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 1


def test_console_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "lossmix.cli", "mixfn", "--out", str(tmp_path),
                           "--rho", "pow:2", "--points", "5"], capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert (tmp_path / "mixfn" / "phi_pow_2.csv").exists()
