import json
import subprocess
import sys

import numpy as np
import pytest

from picnet.cli import main
from picnet.container import read_csv
from picnet.network import build_cascade, load_model, save_model
from picnet.synth import file_checksum, load_dataset

TINY = {"channels": 8, "depth": 2, "num_keys": 4, "num_values": 4, "window": 3, "epochs": 2, "batch_size": 8,
        "data": {"length": 16, "num_classes": 3, "segments_per_class": 2, "actions_per_segment": 2,
                 "n_train": 12, "n_test": 6}}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("PICNET_OUTPUT_DIR", raising=False)
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    return tmp_path


@pytest.fixture
def dataset(workdir):
    assert main(["gen-data", "--config", "cfg.json", "--out", "d.picd"]) == 0
    return workdir / "d.picd"


def test_gen_data_checksum_stable(workdir, capsys):
    main(["gen-data", "--config", "cfg.json", "--out", "a.picd"])
    main(["gen-data", "--config", "cfg.json", "--out", "b.picd"])
    out = capsys.readouterr().out
    sums = [line for line in out.splitlines() if line.startswith("sha256=")]
    assert sums[0] == sums[1] == f"sha256={file_checksum(workdir / 'a.picd')}"
    assert "classes=3" in out


def test_gen_data_default_counts(workdir, capsys):
    assert main(["gen-data", "--out", "d.picd"]) == 0
    assert "samples=300 (train=200, test=100) N=64 C=64" in capsys.readouterr().out


def test_missing_output_dir_exit_2(workdir, capsys):
    assert main(["gen-data", "--config", "cfg.json", "--out", "nope/d.picd"]) == 2
    assert "error" in capsys.readouterr().err


def test_invalid_config_exit_2(workdir):
    (workdir / "bad.json").write_text('{"variant": "lstm"}')
    assert main(["gen-data", "--config", "bad.json", "--out", "d.picd"]) == 2
    assert main(["gen-data", "--config", "missing.json", "--out", "d.picd"]) == 2


def test_output_dir_env_override(workdir, monkeypatch):
    (workdir / "outs").mkdir()
    monkeypatch.setenv("PICNET_OUTPUT_DIR", str(workdir / "outs"))
    assert main(["gen-data", "--config", "cfg.json", "--out", "d.picd"]) == 0
    assert (workdir / "outs" / "d.picd").exists()


def test_train_zero_epochs_is_initial_model(dataset, workdir):
    assert main(["train", "--data", str(dataset), "--out", "m.picm", "--epochs", "0"]) == 0
    ds_cfg = load_model(workdir / "m.picm").config
    save_model(workdir / "init.picm", build_cascade(ds_cfg))
    assert (workdir / "m.picm").read_bytes() == (workdir / "init.picm").read_bytes()


def test_train_deterministic_and_history(dataset, workdir):
    for name in ("a.picm", "b.picm"):
        assert main(["train", "--data", str(dataset), "--out", name]) == 0
    assert (workdir / "a.picm").read_bytes() == (workdir / "b.picm").read_bytes()
    meta, rows = read_csv(workdir / "a.picm.history.csv")
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"epoch", "loss", "metric"}
    assert json.loads(meta["config"])["epochs"] == 2


def test_train_divergence_exit_1(dataset, workdir):
    cfg = dict(TINY, learning_rate=1e200)
    (workdir / "hot.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", "hot.json", "--data", str(dataset), "--out", "m.picm"]) == 1
    model = load_model(workdir / "m.picm")
    assert all(np.isfinite(t.data).all() for t in model.named_parameters().values())


def test_train_keep_best(dataset, workdir):
    assert main(["train", "--data", str(dataset), "--out", "m.picm", "--keep-best", "--history", "h.csv"]) == 0
    assert (workdir / "h.csv").exists()


def test_eval_uniform_equals_plain(dataset, workdir, capsys):
    main(["train", "--data", str(dataset), "--out", "m.picm"])
    capsys.readouterr()
    assert main(["eval", "--model", "m.picm", "--data", str(dataset), "--csv", "plain.csv"]) == 0
    assert main(["eval", "--model", "m.picm", "--data", str(dataset), "--perm", "uniform", "--csv", "u.csv"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == out[1]
    assert read_csv(workdir / "plain.csv")[1] == read_csv(workdir / "u.csv")[1]


def test_eval_drop_table_columns(dataset, workdir, capsys):
    main(["train", "--data", str(dataset), "--out", "m.picm"])
    capsys.readouterr()
    assert main(["eval", "--model", "m.picm", "--data", str(dataset), "--perm", "uniform", "--perm", "fine",
                 "--perm-seeds", "2", "--csv", "drop.csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["protocol", "metric", "drop"]
    assert [line.split()[0] for line in lines[1:]] == ["uniform", "fine"]
    rows = read_csv(workdir / "drop.csv")[1]
    assert [r["protocol"] for r in rows] == ["uniform", "uniform", "fine", "fine"]


def test_eval_incompatible_channels_exit_3(dataset, workdir, capsys):
    main(["train", "--data", str(dataset), "--out", "m.picm"])
    (workdir / "c4.json").write_text(json.dumps(dict(TINY, channels=4)))
    main(["gen-data", "--config", "c4.json", "--out", "d4.picd"])
    capsys.readouterr()
    assert main(["eval", "--model", "m.picm", "--data", "d4.picd"]) == 3
    err = capsys.readouterr().err
    assert "channels: model=8 data=4" in err


def test_eval_untrained_model_exit_1(dataset, workdir):
    save_model(workdir / "raw.picm", build_cascade(load_dataset(dataset).config))
    assert main(["eval", "--model", "raw.picm", "--data", str(dataset)]) == 1


def test_eval_corrupt_model_exit_2(dataset, workdir):
    (workdir / "bad.picm").write_bytes(b"PICM\x05\x00\x00\x00")
    assert main(["eval", "--model", "bad.picm", "--data", str(dataset)]) == 2


def test_profile_rows_and_determinism(workdir):
    args = ["profile", "--config", "cfg.json", "--depths", "1..4", "--variants", "pic,pic_ordered", "--no-timing"]
    assert main(args + ["--out", "p1.csv"]) == 0
    assert main(args + ["--out", "p2.csv"]) == 0
    _, rows = read_csv(workdir / "p1.csv")
    assert len(rows) == 8
    for v in ("pic", "pic_ordered"):
        params = [int(r["params"]) for r in rows if r["variant"] == v]
        assert all(b > a for a, b in zip(params, params[1:]))
    assert (workdir / "p1.csv").read_text() == (workdir / "p2.csv").read_text()


def test_profile_depth_list_and_bad_variant(workdir, capsys):
    assert main(["profile", "--config", "cfg.json", "--depths", "1,3", "--no-timing"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2 + 1 + 2
    assert main(["profile", "--variants", "lstm", "--no-timing"]) == 2


def test_verify_pass_and_fault(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 8
    assert main(["verify", "--inject-fault", "row_max_tiebreak"]) == 1
    captured = capsys.readouterr()
    assert "[FAIL] row_max" in captured.out and "row_max" in captured.err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "picnet.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for verb in ("gen-data", "train", "eval", "profile", "verify"):
        assert verb in proc.stdout
    assert "inject" not in proc.stdout
