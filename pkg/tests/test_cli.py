"""Command-line interface: exit codes, file products, end-to-end run."""

import filecmp
import os
import subprocess
import sys

import numpy as np
import pytest

from liplab.cli import main
from liplab.imagio import read_mask_pgm, read_tensor
from liplab.metrics import overlap_metrics


def run_synth(out_dir, n=2, seed=0):
    rc = main(["synth", "--n", str(n), "--out-dir", str(out_dir), "--seed", str(seed)])
    assert rc == 0


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_no_command_is_usage_error():
    assert main([]) == 1


def test_unknown_flag_is_usage_error():
    assert main(["texture", "--bogus", "x"]) == 1


def test_unknown_command_is_usage_error():
    assert main(["segment-everything"]) == 1


def test_missing_input_file_is_data_error(tmp_path):
    rc = main(["texture", "--image", str(tmp_path / "nope.ppm"), "--out", str(tmp_path / "o.tf")])
    assert rc == 2


def test_unknown_config_key_is_data_error(tmp_path):
    config = tmp_path / "train.cfg"
    config.write_text("epochz = 3\n")
    rc = main(["train", "--config", str(config)])
    assert rc == 2


def test_config_requires_directories(tmp_path):
    config = tmp_path / "train.cfg"
    config.write_text("epochs = 1\n")
    assert main(["train", "--config", str(config)]) == 2


def test_eval_dim_mismatch_names_both_files(tmp_path, caplog):
    gt_dir = tmp_path / "gt"
    pred_dir = tmp_path / "pred"
    gt_dir.mkdir()
    pred_dir.mkdir()
    small = np.zeros((8, 8), dtype=np.uint8)
    big = np.zeros((16, 16), dtype=np.uint8)
    small[2, 2] = 1
    big[3, 3] = 1
    from liplab.imagio import write_mask_pgm

    write_mask_pgm(gt_dir / "m.pgm", small)
    write_mask_pgm(pred_dir / "m.pgm", big)
    rc = main(["eval", "--gt-dir", str(gt_dir), "--pred-dir", str(pred_dir),
               "--out", str(tmp_path / "report.csv")])
    assert rc == 2
    joined = " ".join(r.message for r in caplog.records)
    assert "8x8" in joined and "16x16" in joined
    assert str(gt_dir / "m.pgm") in joined and str(pred_dir / "m.pgm") in joined


def test_infer_with_empty_weight_dir_is_data_error(tmp_path):
    (tmp_path / "w").mkdir()
    run_synth(tmp_path / "d", n=1)
    rc = main(["infer", "--weights", str(tmp_path / "w"),
               "--image", str(tmp_path / "d" / "sample_000.ppm"),
               "--out", str(tmp_path / "m.pgm")])
    assert rc == 2


# ---------------------------------------------------------------------------
# data products
# ---------------------------------------------------------------------------

def test_synth_products_and_idempotence(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_synth(a, n=2, seed=3)
    run_synth(b, n=2, seed=3)
    for name in ("sample_000.ppm", "sample_000_mask.pgm", "sample_000_landmarks.csv",
                 "sample_001.ppm", "run_config.txt"):
        assert (a / name).exists()
        assert filecmp.cmp(a / name, b / name, shallow=False), name
    config = (a / "run_config.txt").read_text()
    assert "seed = 3" in config
    assert "n = 2" in config


def test_maskgen_reproduces_synth_mask(tmp_path):
    run_synth(tmp_path, n=1, seed=4)
    out = tmp_path / "rebuilt.pgm"
    rc = main(["maskgen", "--landmarks", str(tmp_path / "sample_000_landmarks.csv"),
               "--size", "64x64", "--out", str(out)])
    assert rc == 0
    rebuilt = read_mask_pgm(out)
    truth = read_mask_pgm(tmp_path / "sample_000_mask.pgm")
    assert overlap_metrics(truth, rebuilt)[0] >= 0.97


def test_texture_writes_five_channel_tensor(tmp_path):
    run_synth(tmp_path, n=1)
    out = tmp_path / "planes.tf"
    rc = main(["texture", "--image", str(tmp_path / "sample_000.ppm"), "--out", str(out)])
    assert rc == 0
    planes = read_tensor(out)
    assert planes.shape == (64, 64, 5)
    assert planes.min() >= 0.0 and planes.max() <= 1.0


def test_train_infer_eval_round_trip(tmp_path):
    data = tmp_path / "data"
    run_synth(data, n=2, seed=1)
    config = tmp_path / "train.cfg"
    config.write_text(
        "widths = 2,4,8,16\nepochs = 1\nepochs_stage2 = 1\nbatch = 2\n"
    )
    run_dir = tmp_path / "run"
    rc = main(["train", "--config", str(config), "--data-dir", str(data),
               "--out-dir", str(run_dir)])
    assert rc == 0
    assert (run_dir / "manifest.json").exists()
    assert (run_dir / "loss_curves.csv").exists()
    resolved = (run_dir / "run_config.txt").read_text()
    assert "widths = 2,4,8,16" in resolved
    assert "epochs = 1" in resolved
    curves = (run_dir / "loss_curves.csv").read_text().splitlines()
    assert curves[0] == "stage,epoch,loss"
    assert len(curves) == 3  # one epoch per stage

    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    rc = main(["infer", "--weights", str(run_dir),
               "--image", str(data / "sample_000.ppm"),
               "--out", str(pred_dir / "sample_000_mask.pgm"),
               "--prob", str(tmp_path / "prob.tf")])
    assert rc == 0
    prob = read_tensor(tmp_path / "prob.tf")
    assert prob.shape == (64, 64)
    assert prob.min() >= 0.0 and prob.max() <= 1.0
    mask = read_mask_pgm(pred_dir / "sample_000_mask.pgm")
    assert set(np.unique(mask)) <= {0, 1}

    rc = main(["infer", "--weights", str(run_dir),
               "--image", str(data / "sample_001.ppm"),
               "--out", str(pred_dir / "sample_001_mask.pgm")])
    assert rc == 0
    report = tmp_path / "report.csv"
    rc = main(["eval", "--gt-dir", str(data), "--pred-dir", str(pred_dir),
               "--out", str(report)])
    assert rc == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "image,dice,hd,iou,pa,pa_c,voe"
    assert len(lines) == 3
    assert (tmp_path / "report.txt").exists()


# ---------------------------------------------------------------------------
# gradient check command
# ---------------------------------------------------------------------------

def test_gradcheck_passes_with_small_budget(capsys):
    rc = main(["gradcheck", "--seeds", "1", "--max-entries", "3"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "PASS" in out
    assert "seed=0 param=" in out
    assert "worst=" in out and "tolerance=" in out


def test_gradcheck_fails_with_huge_step(capsys):
    # a 0.5 FD step hops relu and maxpool kinks, so the check must fail
    rc = main(["gradcheck", "--seeds", "1", "--max-entries", "2", "--eps", "0.5"])
    assert rc == 3
    assert "FAIL" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# console entry point
# ---------------------------------------------------------------------------

def test_console_script_installed():
    proc = subprocess.run(
        [sys.executable, "-m", "liplab.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode in (0, None)
    assert "upper-lip segmentation toolkit" in proc.stdout
