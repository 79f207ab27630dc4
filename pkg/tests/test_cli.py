import json
import os
import subprocess
import sys

import pytest

from cugcn.cli import build_parser, main
from cugcn.experiments import read_jsonl

SMALL = ["--samples_per_class", "8"]
FAST = ["--epochs", "2", "--batch_size", "8"]


def run_cli(*args, env=None, cwd=None):
    return subprocess.run([sys.executable, "-m", "cugcn", *args], capture_output=True, text=True,
                          env=env, cwd=cwd, timeout=300)


def test_flags_mirror_config_fields():
    parser = build_parser()
    args = parser.parse_args(["train", "--lr_init", "0.02", "--label_noise_rate", "0.1", "--no-mixup",
                              "--t_temperature", "0.5", "--early_stop_patience", "4"])
    assert args.lr_init == 0.02 and args.label_noise_rate == 0.1 and args.mixup is False
    gen = parser.parse_args(["generate", "--seed", "3", "--n_subjects", "2"])
    assert gen.seed == 3 and gen.n_subjects == 2


def test_generate_train_evaluate(tmp_path):
    data = tmp_path / "data"
    assert main(["generate", "--out", str(data), *SMALL]) == 0
    assert (data / "manifest.txt").exists() and (data / "positions.txt").exists()
    run = tmp_path / "run"
    assert main(["train", "--data", str(data / "manifest.txt"), "--out", str(run), *FAST]) == 0
    hist = read_jsonl(run / "history.jsonl")
    assert len(hist) == 2 and set(hist[0]) >= {"epoch", "train_loss", "val_loss", "lr"}
    assert (run / "history.png").exists() and (run / "confusion.png").exists()
    ev = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.npz"), "--out", str(ev), "--no-figures"]) == 0
    assert (ev / "report.jsonl").read_bytes() == (run / "report.jsonl").read_bytes()
    assert not (ev / "confusion.png").exists()
    (report,) = read_jsonl(ev / "report.jsonl")
    assert sum(map(sum, report["confusion_matrix"])) == report["n_test"]
    assert report["config"]["train"]["epochs"] == 2


def test_output_dir_from_environment(tmp_path):
    env = dict(os.environ, CUGCN_OUTPUT_DIR=str(tmp_path / "envout"))
    res = run_cli("filter-curves", "--resolution", "5", "--no-figures", env=env)
    assert res.returncode == 0, res.stderr
    assert len(read_jsonl(tmp_path / "envout" / "filter_curves.jsonl")) == 5 * 4 * 4


def test_error_record_and_exit_code(tmp_path):
    res = run_cli("train", "--lr_init", "0.5", "--out", str(tmp_path))
    assert res.returncode != 0
    record = json.loads(res.stderr.strip().splitlines()[-1])
    assert record["error"] == "ParameterError" and record["command"] == "train"
    missing = run_cli("evaluate", "--checkpoint", str(tmp_path / "nope.npz"), "--out", str(tmp_path))
    assert missing.returncode != 0
    assert json.loads(missing.stderr.strip().splitlines()[-1])["error"] == "FormatError"


def test_bad_feature_file_reports_line(tmp_path):
    (tmp_path / "a.txt").write_text("cugcn-features v1, 2, 2, 0\n1 2\n3 oops\n")
    (tmp_path / "manifest.txt").write_text("a.txt 0 0\n")
    res = run_cli("train", "--data", str(tmp_path / "manifest.txt"), "--out", str(tmp_path / "o"))
    assert res.returncode != 0
    assert "a.txt:3" in json.loads(res.stderr.strip().splitlines()[-1])["message"]


def test_sweep_and_ablate_commands(tmp_path, capsys):
    assert main(["sweep-depth", "--out", str(tmp_path / "sw"), *SMALL, *FAST, "--variants", "vgcn,cugcn",
                 "--depths", "1,2", "--seeds", "3", "--hidden_dim", "4"]) == 0
    rows = read_jsonl(tmp_path / "sw" / "sweep.jsonl")
    assert len(rows) == 4 and (tmp_path / "sw" / "sweep.png").exists()
    assert main(["ablate", "--out", str(tmp_path / "ab"), *SMALL, *FAST, "--toggles", "no-mixup,fixed-p=0.5",
                 "--seeds", "1", "--hidden_dim", "4"]) == 0
    rows = read_jsonl(tmp_path / "ab" / "ablation.jsonl")
    assert [r["toggle"] for r in rows] == ["full", "no-mixup", "fixed-p=0.5"]
    out = capsys.readouterr().out
    assert "toggle" in out and "variant" in out


def test_gradcheck_command(tmp_path):
    assert main(["gradcheck", "--seeds", "1", "--out", str(tmp_path)]) == 0
    rows = read_jsonl(tmp_path / "gradcheck.jsonl")
    assert rows and all(r["pass"] for r in rows)


def test_loso_protocol(tmp_path):
    assert main(["train", "--out", str(tmp_path), *SMALL, *FAST, "--protocol", "loso", "--holdout_subject", "1",
                 "--no-figures"]) == 0
    (report,) = read_jsonl(tmp_path / "report.jsonl")
    assert list(report["group_accuracy"]) == ["1"]


def test_band_selection(tmp_path):
    assert main(["train", "--out", str(tmp_path), *SMALL, *FAST, "--bands", "beta,gamma", "--no-figures"]) == 0
    (report,) = read_jsonl(tmp_path / "report.jsonl")
    assert report["config"]["model"]["n_features"] == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--adjacency", "knn"])
