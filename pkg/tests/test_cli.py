import json
import os

import pytest

from vgqa.cli import main

CFG = {
    "hierarchy": {"K": 4, "L": 8, "gamma": 0.25, "N": 3, "M": 8, "d": 16, "H": 2},
    "train": {"max_epochs": 1, "batch_size": 8, "seed": 0},
    "data": {"train_episodes": 3, "val_episodes": 2, "test_episodes": 2,
             "embed_dim": 12},
}


@pytest.fixture
def workspace(tmp_path):
    cfg = json.loads(json.dumps(CFG))
    cfg["data"]["dataset_dir"] = str(tmp_path / "ds")
    cfg["data"]["out_dir"] = str(tmp_path / "run")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return tmp_path, str(path)


def test_generate_train_eval_trace(workspace, capsys):
    tmp, cfg = workspace
    assert main(["generate", "--config", cfg]) == 0
    assert (tmp / "ds" / "dataset.json").exists()
    assert main(["train", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "best val accuracy" in out
    run = tmp / "run"
    for name in ("checkpoint.npz", "metrics.csv", "history.png", "train_results.json"):
        assert (run / name).exists(), name

    assert main(["eval", "--config", cfg, "--checkpoint", str(run / "checkpoint.npz"),
                 "--split", "test"]) == 0
    assert (run / "eval_test.json").exists()

    sample = json.loads((tmp / "ds" / "val.json").read_text())[0]["sample_id"]
    assert main(["trace", "--config", cfg, "--checkpoint", str(run / "checkpoint.npz"),
                 "--samples", sample, "--out", str(run / "traces")]) == 0
    assert (run / "traces" / "traces.jsonl").exists()
    pngs = [f for f in os.listdir(run / "traces") if f.endswith(".png")]
    assert pngs


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"hierarchy": {"d": 3}}))
    assert main(["train", "--config", str(bad)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2


def test_data_error_exit_code(workspace):
    tmp, cfg = workspace
    # training without generating the dataset first
    assert main(["train", "--config", cfg]) == 3


def test_seed_and_set_overrides(workspace, capsys):
    tmp, cfg = workspace
    rc = main(["generate", "--config", cfg, "--seed", "7", "--set", "data.train_episodes=1"])
    assert rc == 0
    echoed = capsys.readouterr().out
    header = json.loads(echoed[:echoed.index("\n}") + 2])
    assert header["train"]["seed"] == 7
    assert header["data"]["train_episodes"] == 1


def test_generate_determinism_via_cli(workspace, capsys):
    tmp, cfg = workspace
    assert main(["generate", "--config", cfg, "--out", str(tmp / "d1")]) == 0
    assert main(["generate", "--config", cfg, "--out", str(tmp / "d2")]) == 0
    a = (tmp / "d1" / "features" / "ep00000.npz").read_bytes()
    b = (tmp / "d2" / "features" / "ep00000.npz").read_bytes()
    assert a == b


def test_gradcheck_command(workspace, capsys):
    tmp, cfg = workspace
    rc = main(["gradcheck", "--config", cfg,
               "--set", "hierarchy.K=2", "--set", "hierarchy.d=8",
               "--set", "hierarchy.M=4", "--set", "hierarchy.L=4",
               "--set", "hierarchy.gamma=0.5"])
    assert rc == 0
    assert (tmp / "run" / "gradcheck.json").exists()
    rep = json.loads((tmp / "run" / "gradcheck.json").read_text())
    assert all(row["max_rel_err"] < 1e-4 for row in rep.values())
