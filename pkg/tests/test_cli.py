"""Command-line interface, run end to end in process through main().

A module-scoped workspace holds a two-pair 32x32 dataset and one trained
checkpoint; individual tests drive every subcommand and the exit-code
contract against it.
"""

import csv

import numpy as np
import pytest

from conftest import make_pair
from spdfuse import errors
from spdfuse.checkpoint import load_checkpoint, load_matrix
from spdfuse.cli import CHECKPOINT_NAME, VIF_NOTE, main
from spdfuse.imgio import load_image, save_image
from spdfuse.metrics import MetricReport

CFG_KEYS = dict(
    patch_size=16,
    stride=8,
    pad=8,
    image_size=32,
    reeig_eps=1e-3,
    cov_eps=1e-3,
    depth=1,
    lr_stiefel=0.01,
    lr_conv=1e-4,
    alpha=1.0,
    beta=10.0,
    gamma=20.0,
    epochs=1,
    seed=0,
    feature_bank="default",
)


def write_cfg(path, ir_dir, vi_dir, out_dir, **overrides):
    entries = dict(CFG_KEYS)
    entries.update(overrides)
    entries.update(ir_dir=ir_dir, vi_dir=vi_dir, out_dir=out_dir)
    path.write_text("\n".join(f"{k} = {v}" for k, v in entries.items()) + "\n")
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ir_dir = root / "ir"
    vi_dir = root / "vi"
    ir_dir.mkdir()
    vi_dir.mkdir()
    rng = np.random.default_rng(2026)
    for stem in ("pair_a", "pair_b"):
        ir, vi = make_pair(rng, 32)
        save_image(ir, ir_dir / f"{stem}.pgm")
        save_image(vi, vi_dir / f"{stem}.pgm")
    return root


@pytest.fixture(scope="module")
def ckpt(workspace):
    out_dir = workspace / "out_main"
    cfg = write_cfg(workspace / "main.cfg", workspace / "ir", workspace / "vi", out_dir)
    assert main(["train", "--config", str(cfg)]) == 0
    return out_dir / CHECKPOINT_NAME


# ---------------------------------------------------------------------------
# train


def test_train_outputs(workspace, ckpt, capsys):
    capsys.readouterr()
    assert ckpt.is_file()
    loss_csv = ckpt.parent / "loss_curve.csv"
    with open(loss_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [
        "epoch", "step", "l_int", "l_grad", "l_ssim", "l_cov", "total", "stiefel_defect",
    ]
    assert len(rows) == 1 + 2  # one epoch over two pairs
    totals = [float(r[6]) for r in rows[1:]]
    assert all(np.isfinite(totals))
    assert all(float(r[7]) < 1e-10 for r in rows[1:])


def test_train_deterministic(workspace):
    outs = []
    for tag in ("det_a", "det_b"):
        out_dir = workspace / tag
        cfg = write_cfg(
            workspace / f"{tag}.cfg", workspace / "ir", workspace / "vi", out_dir
        )
        assert main(["train", "--config", str(cfg)]) == 0
        outs.append((out_dir / CHECKPOINT_NAME).read_bytes())
    assert outs[0] == outs[1]


def test_train_resume_noop(workspace, ckpt, capsys):
    cfg = write_cfg(
        workspace / "noop.cfg", workspace / "ir", workspace / "vi", workspace / "noop_out"
    )
    assert main(["train", "--config", str(cfg), "--resume", str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "nothing to do" in out


def test_resume_equals_uninterrupted(workspace):
    ir, vi = workspace / "ir", workspace / "vi"
    straight = workspace / "straight"
    cfg2 = write_cfg(workspace / "two.cfg", ir, vi, straight, epochs=2)
    assert main(["train", "--config", str(cfg2)]) == 0

    part = workspace / "part"
    cfg1 = write_cfg(workspace / "one.cfg", ir, vi, part, epochs=1)
    assert main(["train", "--config", str(cfg1)]) == 0
    rest = workspace / "rest"
    cfg_rest = write_cfg(workspace / "rest.cfg", ir, vi, rest, epochs=2)
    assert (
        main(
            ["train", "--config", str(cfg_rest), "--resume", str(part / CHECKPOINT_NAME)]
        )
        == 0
    )
    assert (straight / CHECKPOINT_NAME).read_bytes() == (
        rest / CHECKPOINT_NAME
    ).read_bytes()


def test_resume_rejects_geometry_change(workspace, ckpt, capsys):
    cfg = write_cfg(
        workspace / "badgeo.cfg",
        workspace / "ir",
        workspace / "vi",
        workspace / "badgeo_out",
        image_size=64,
    )
    assert main(["train", "--config", str(cfg), "--resume", str(ckpt)]) == 2
    assert "geometry" in capsys.readouterr().err


def test_train_missing_config_key(workspace, tmp_path, capsys):
    cfg = tmp_path / "broken.cfg"
    lines = [f"{k} = {v}" for k, v in CFG_KEYS.items() if k != "gamma"]
    lines += ["ir_dir = x", "vi_dir = y", "out_dir = z"]
    cfg.write_text("\n".join(lines) + "\n")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "gamma" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# fuse


def test_fuse_writes_image_and_metrics(workspace, ckpt, tmp_path, capsys):
    out = tmp_path / "fused.pgm"
    code = main(
        [
            "fuse",
            "--ckpt", str(ckpt),
            "--ir", str(workspace / "ir" / "pair_a.pgm"),
            "--vi", str(workspace / "vi" / "pair_a.pgm"),
            "--out", str(out),
        ]
    )
    assert code == 0
    fused = load_image(out)
    assert fused.shape == (32, 32)
    lines = capsys.readouterr().out.strip().splitlines()
    printed = dict(l.split("=", 1) for l in lines if "=" in l)
    for field in MetricReport.FIELDS:
        float(printed[field])  # every metric printed as name=value


def test_fuse_deterministic(workspace, ckpt, tmp_path):
    outs = []
    for tag in ("x", "y"):
        out = tmp_path / f"{tag}.pgm"
        main(
            [
                "fuse",
                "--ckpt", str(ckpt),
                "--ir", str(workspace / "ir" / "pair_b.pgm"),
                "--vi", str(workspace / "vi" / "pair_b.pgm"),
                "--out", str(out),
            ]
        )
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_fuse_resizes_foreign_sizes(workspace, ckpt, tmp_path, rng):
    big = tmp_path / "big.pgm"
    save_image(rng.random((64, 48)), big)
    out = tmp_path / "fused.pgm"
    code = main(
        ["fuse", "--ckpt", str(ckpt), "--ir", str(big), "--vi", str(big), "--out", str(out)]
    )
    assert code == 0
    assert load_image(out).shape == (32, 32)


def test_fuse_missing_checkpoint(tmp_path, capsys):
    code = main(
        [
            "fuse",
            "--ckpt", str(tmp_path / "absent.smlc"),
            "--ir", "a.pgm",
            "--vi", "b.pgm",
            "--out", str(tmp_path / "o.pgm"),
        ]
    )
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


# ---------------------------------------------------------------------------
# eval


def run_eval(workspace, ckpt, out_csv):
    return main(
        [
            "eval",
            "--ckpt", str(ckpt),
            "--ir-dir", str(workspace / "ir"),
            "--vi-dir", str(workspace / "vi"),
            "--out-csv", str(out_csv),
        ]
    )


def test_eval_csv_layout(workspace, ckpt, tmp_path, monkeypatch):
    monkeypatch.setenv("SMLNET_THREADS", "1")
    out_csv = tmp_path / "metrics.csv"
    assert run_eval(workspace, ckpt, out_csv) == 0

    text = out_csv.read_text().splitlines()
    assert text[0] == VIF_NOTE
    rows = list(csv.reader(text[1:]))
    assert rows[0] == ["pair", *MetricReport.FIELDS]
    assert [r[0] for r in rows[1:]] == ["pair_a", "pair_b", "mean"]
    # the mean row reproduces the mean of the rounded per-pair values
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:3]])
    mean = [float(v) for v in rows[3][1:]]
    assert np.array_equal(np.mean(data, axis=0), np.array(mean))


def test_eval_parallel_matches_sequential(workspace, ckpt, tmp_path, monkeypatch):
    monkeypatch.setenv("SMLNET_THREADS", "1")
    seq = tmp_path / "seq.csv"
    run_eval(workspace, ckpt, seq)
    monkeypatch.setenv("SMLNET_THREADS", "2")
    par = tmp_path / "par.csv"
    run_eval(workspace, ckpt, par)
    assert seq.read_bytes() == par.read_bytes()


def test_eval_rejects_bad_thread_env(workspace, ckpt, tmp_path, monkeypatch):
    monkeypatch.setenv("SMLNET_THREADS", "lots")
    assert run_eval(workspace, ckpt, tmp_path / "m.csv") == 1


def test_eval_rejects_orphan_pair(workspace, ckpt, tmp_path, rng, capsys):
    ir_dir = tmp_path / "ir"
    vi_dir = tmp_path / "vi"
    ir_dir.mkdir()
    vi_dir.mkdir()
    save_image(rng.random((32, 32)), ir_dir / "only.pgm")
    code = main(
        [
            "eval",
            "--ckpt", str(ckpt),
            "--ir-dir", str(ir_dir),
            "--vi-dir", str(vi_dir),
            "--out-csv", str(tmp_path / "m.csv"),
        ]
    )
    assert code == 2
    assert "only" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# inspect-cov


def test_inspect_cov_without_checkpoint(workspace, tmp_path, capsys):
    prefix = tmp_path / "cov" / "dump"
    code = main(
        [
            "inspect-cov",
            "--ir", str(workspace / "ir" / "pair_a.pgm"),
            "--vi", str(workspace / "vi" / "pair_a.pgm"),
            "--out-prefix", str(prefix),
        ]
    )
    assert code == 0
    n = 25  # 32x32 image with 16/8/8 windows
    for name in ("c_irir", "c_irvi", "c_viir", "c_vivi"):
        block = load_matrix(f"{prefix}_{name}.bin")
        assert block.shape == (n, n)
        assert load_image(f"{prefix}_{name}.pgm").shape == (n, n)
    viir = load_matrix(f"{prefix}_c_viir.bin")
    irvi = load_matrix(f"{prefix}_c_irvi.bin")
    assert np.array_equal(viir, irvi.T)
    assert len(capsys.readouterr().out.strip().splitlines()) == 4


def test_inspect_cov_identical_sources(workspace, tmp_path):
    prefix = tmp_path / "same"
    ir = str(workspace / "ir" / "pair_a.pgm")
    main(["inspect-cov", "--ir", ir, "--vi", ir, "--out-prefix", str(prefix)])
    a = load_matrix(f"{prefix}_c_irir.bin")
    b = load_matrix(f"{prefix}_c_irvi.bin")
    assert np.allclose(a, b, atol=1e-14)


def test_inspect_cov_with_checkpoint(workspace, ckpt, tmp_path):
    prefix = tmp_path / "withnet"
    code = main(
        [
            "inspect-cov",
            "--ir", str(workspace / "ir" / "pair_a.pgm"),
            "--vi", str(workspace / "vi" / "pair_a.pgm"),
            "--out-prefix", str(prefix),
            "--ckpt", str(ckpt),
        ]
    )
    assert code == 0
    xk = load_matrix(f"{prefix}_xk.bin")
    assert xk.shape == (50, 50)  # cross strategy: both modalities stacked
    assert np.allclose(xk, xk.T, atol=0)


# ---------------------------------------------------------------------------
# diagnose


def test_diagnose_raw_covariance(workspace, tmp_path, capsys):
    out_csv = tmp_path / "points.csv"
    code = main(
        [
            "diagnose",
            "--ir", str(workspace / "ir" / "pair_a.pgm"),
            "--vi", str(workspace / "vi" / "pair_a.pgm"),
            "--out-csv", str(out_csv),
            "--k", "5",
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    stats = dict(
        line.split("=", 1) for line in out.strip().splitlines() if "=" in line
    )
    assert set(stats) >= {"ss", "imdr", "cm_nnr"}
    assert -1.0 <= float(stats["ss"]) <= 1.0
    assert float(stats["imdr"]) > 0.0
    assert 0.0 <= float(stats["cm_nnr"]) <= 1.0

    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "label"
    assert len(rows) == 1 + 50  # 2 x 25 patch rows
    labels = [r[0] for r in rows[1:]]
    assert labels == ["1"] * 25 + ["2"] * 25


def test_diagnose_with_checkpoint(workspace, ckpt, tmp_path):
    out_csv = tmp_path / "points.csv"
    code = main(
        [
            "diagnose",
            "--ir", str(workspace / "ir" / "pair_b.pgm"),
            "--vi", str(workspace / "vi" / "pair_b.pgm"),
            "--ckpt", str(ckpt),
            "--out-csv", str(out_csv),
            "--k", "3",
        ]
    )
    assert code == 0
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 50


def test_diagnose_k_too_large(workspace, tmp_path):
    code = main(
        [
            "diagnose",
            "--ir", str(workspace / "ir" / "pair_a.pgm"),
            "--vi", str(workspace / "vi" / "pair_a.pgm"),
            "--out-csv", str(tmp_path / "p.csv"),
            "--k", "50",
        ]
    )
    assert code == 1


# ---------------------------------------------------------------------------
# ablate


def test_ablate_strategy_grid(workspace, capsys):
    out_dir = workspace / "ablate_out"
    cfg = write_cfg(
        workspace / "ablate.cfg", workspace / "ir", workspace / "vi", out_dir
    )
    code = main(
        ["ablate", "--config", str(cfg), "--grid", "strategy=cross,single_ir"]
    )
    assert code == 0
    with open(out_dir / "ablation.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["param", "value", *MetricReport.FIELDS]
    assert [r[1] for r in rows[1:]] == ["cross", "single_ir"]

    a = load_matrix(out_dir / "ablate_strategy_cross" / "cov_raw.bin")
    b = load_matrix(out_dir / "ablate_strategy_single_ir" / "cov_raw.bin")
    assert a.shape == (50, 50)
    assert b.shape == (25, 25)  # single-modality covariance is half the size


def test_ablate_rejects_bad_grid(workspace, capsys):
    cfg = write_cfg(
        workspace / "badgrid.cfg",
        workspace / "ir",
        workspace / "vi",
        workspace / "badgrid_out",
    )
    assert main(["ablate", "--config", str(cfg), "--grid", "lr=0.1,0.2"]) == 1
    assert main(["ablate", "--config", str(cfg), "--grid", "strategy=fancy"]) == 1
    assert main(["ablate", "--config", str(cfg), "--grid", "depth=two"]) == 1


# ---------------------------------------------------------------------------
# exit-code contract


def test_usage_errors_exit_one(capsys):
    assert main(["train"]) == 1  # missing --config
    assert main(["warp"]) == 1  # unknown subcommand
    assert capsys.readouterr().err.count("error:") == 2


def test_error_taxonomy_exit_codes():
    assert errors.UsageError("x").exit_code == 1
    assert errors.ConfigError("x").exit_code == 1
    assert errors.KTooLarge("x").exit_code == 1
    assert errors.DataError("x").exit_code == 2
    assert errors.IoError("x").exit_code == 2
    assert errors.CorruptFile("x").exit_code == 2
    assert errors.VersionMismatch("x").exit_code == 2
    assert errors.NumericError("x").exit_code == 3
    assert errors.NonFiniteLoss("x").exit_code == 3
    assert errors.RetractionFailure("x").exit_code == 3


def test_numeric_errors_map_to_exit_three(monkeypatch, capsys):
    def blow_up(args):
        raise errors.NonFiniteInput("synthetic numeric failure")

    # main() builds its parser at call time from the module-level command
    monkeypatch.setattr("spdfuse.cli.cmd_fuse", blow_up)
    code = main(["fuse", "--ckpt", "c", "--ir", "i", "--vi", "v", "--out", "o"])
    assert code == 3
    assert "synthetic" in capsys.readouterr().err
