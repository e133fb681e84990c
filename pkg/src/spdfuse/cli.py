"""Command-line surface: train, fuse, eval, inspect-cov, diagnose, ablate.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 data error, 3 numeric failure. Every command is deterministic given its
seed, inputs, and flags; eval fan-out is capped by SMLNET_THREADS.
"""

from __future__ import annotations

import argparse
import copy
import csv
import os
import sys
import threading
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint, save_matrix
from .config import RunConfig, parse_config
from .errors import DataError, NonFiniteLoss, SpdFuseError, UsageError
from .imgio import ensure_dir, list_pairs, load_image, resize_bilinear, save_image
from .losses import make_bank
from .metrics import MetricReport, PointSet, cm_nnr, compute_all, imdr, silhouette
from .patches import PatchGeometry, extract_patches
from .pipeline import (
    STRATEGIES,
    FusionModel,
    TrainConfig,
    build_covariance,
    fuse,
    init_model,
    train_step,
)
from .spd import composite_covariance

VIF_NOTE = "# vif: pixel-domain 4-scale, sigma_n^2=2, mean of per-source values"
METRIC_HEADER = ["pair", *MetricReport.FIELDS]
CHECKPOINT_NAME = "model.smlc"


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad flags through the exit-code contract."""

    def error(self, message):
        raise UsageError(message)


def _geometry(cfg: RunConfig) -> PatchGeometry:
    return PatchGeometry(
        patch_size=cfg.patch_size,
        stride=cfg.stride,
        pad=cfg.pad,
        image_h=cfg.image_size,
        image_w=cfg.image_size,
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr_stiefel=cfg.lr_stiefel,
        lr_conv=cfg.lr_conv,
        alpha=cfg.alpha,
        beta=cfg.beta,
        gamma=cfg.gamma,
        epochs=cfg.epochs,
        seed=cfg.seed,
        image_size=cfg.image_size,
    )


def _load_sized(path, h: int, w: int) -> np.ndarray:
    img = load_image(path)
    if img.shape != (h, w):
        img = resize_bilinear(img, h, w)
    return img


def _max_workers(n_items: int) -> int:
    cap = os.environ.get("SMLNET_THREADS")
    limit = os.cpu_count() or 1
    if cap is not None:
        try:
            limit = min(limit, int(cap))
        except ValueError as exc:
            raise UsageError(f"SMLNET_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(limit, n_items))


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# ---------------------------------------------------------------------------
# training


def train_run(
    cfg: RunConfig,
    strategy: str = "cross",
    resume=None,
    ckpt_path=None,
    loss_csv_path=None,
    log=print,
) -> FusionModel:
    """Train per config; writes a checkpoint every epoch and a per-step
    loss CSV. Resuming a finished run is a no-op."""
    geom = _geometry(cfg)
    pairs = list_pairs(cfg.ir_dir, cfg.vi_dir)
    if resume is not None:
        model = load_checkpoint(resume)
        if model.geometry != geom:
            raise DataError(
                f"checkpoint geometry {model.geometry} differs from config {geom}"
            )
        if model.strategy != strategy:
            raise DataError(
                f"checkpoint strategy {model.strategy!r} differs from {strategy!r}"
            )
    else:
        model = init_model(
            geom,
            depth=cfg.depth,
            reeig_eps=cfg.reeig_eps,
            cov_eps=cfg.cov_eps,
            seed=cfg.seed,
            strategy=strategy,
        )

    if model.trained_epochs >= cfg.epochs:
        log(
            f"checkpoint already trained for {model.trained_epochs} epochs "
            f"(target {cfg.epochs}); nothing to do"
        )
        return model

    tcfg = _train_config(cfg)
    bank = make_bank(cfg.feature_bank)
    step = model.trained_epochs * len(pairs)
    csv_fh = open(loss_csv_path, "w", encoding="utf-8", newline="") if loss_csv_path else None
    writer = None
    if csv_fh is not None:
        writer = csv.writer(csv_fh)
        writer.writerow(
            ["epoch", "step", "l_int", "l_grad", "l_ssim", "l_cov", "total", "stiefel_defect"]
        )
    try:
        for epoch in range(model.trained_epochs, cfg.epochs):
            totals = []
            for stem, ir_path, vi_path in pairs:
                ir = _load_sized(ir_path, cfg.image_size, cfg.image_size)
                vi = _load_sized(vi_path, cfg.image_size, cfg.image_size)
                step += 1
                try:
                    report = train_step(model, ir, vi, tcfg, bank)
                except NonFiniteLoss as exc:
                    log(f"step {step} ({stem}): {exc}; update skipped", file=sys.stderr)
                    continue
                totals.append(report.total)
                if writer is not None:
                    writer.writerow(
                        [
                            epoch,
                            step,
                            f"{report.l_int:.10g}",
                            f"{report.l_grad:.10g}",
                            f"{report.l_ssim:.10g}",
                            f"{report.l_cov:.10g}",
                            f"{report.total:.10g}",
                            f"{model.stiefel_defect():.3e}",
                        ]
                    )
                    csv_fh.flush()
            model.trained_epochs = epoch + 1
            if ckpt_path is not None:
                save_checkpoint(model, ckpt_path)
            mean_total = float(np.mean(totals)) if totals else float("nan")
            log(f"epoch {epoch}: mean total loss {mean_total:.6g} over {len(totals)} steps")
    finally:
        if csv_fh is not None:
            csv_fh.close()
    return model


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    out_dir = ensure_dir(cfg.out_dir)
    train_run(
        cfg,
        resume=args.resume,
        ckpt_path=out_dir / CHECKPOINT_NAME,
        loss_csv_path=out_dir / "loss_curve.csv",
    )
    print(f"checkpoint: {out_dir / CHECKPOINT_NAME}")
    return 0


# ---------------------------------------------------------------------------
# fusion and evaluation


def cmd_fuse(args) -> int:
    model = load_checkpoint(args.ckpt)
    geom = model.geometry
    ir = _load_sized(args.ir, geom.image_h, geom.image_w)
    vi = _load_sized(args.vi, geom.image_h, geom.image_w)
    fused = fuse(model, ir, vi)
    save_image(fused, args.out)
    report = compute_all(fused, ir, vi)
    for name, value in zip(MetricReport.FIELDS, report.values()):
        print(f"{name}={_fmt(value)}")
    print(f"fused image: {args.out}")
    return 0


def _eval_reports(model: FusionModel, pairs, workers: int) -> list[MetricReport]:
    geom = model.geometry

    def work_with(mdl: FusionModel, item) -> MetricReport:
        _stem, ir_path, vi_path = item
        ir = _load_sized(ir_path, geom.image_h, geom.image_w)
        vi = _load_sized(vi_path, geom.image_h, geom.image_w)
        return compute_all(fuse(mdl, ir, vi), ir, vi)

    if workers <= 1:
        return [work_with(model, item) for item in pairs]

    # forward passes cache on the model, so each worker thread gets a copy
    local = threading.local()

    def work(item) -> MetricReport:
        mdl = getattr(local, "model", None)
        if mdl is None:
            mdl = copy.deepcopy(model)
            local.model = mdl
        return work_with(mdl, item)

    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, pairs))


def _write_metric_csv(path, names: list[str], reports: list[MetricReport]) -> None:
    """Per-pair rows at 6 significant digits plus a mean row recomputed from
    the printed (rounded) values and written at full precision."""
    rows = [[name, *(_fmt(v) for v in rep.values())] for name, rep in zip(names, reports)]
    cols = list(zip(*[[float(v) for v in row[1:]] for row in rows]))
    mean_row = ["mean", *(f"{float(np.mean(col)):.17g}" for col in cols)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(VIF_NOTE + "\n")
        writer = csv.writer(fh)
        writer.writerow(METRIC_HEADER)
        writer.writerows(rows)
        writer.writerow(mean_row)


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    pairs = list_pairs(args.ir_dir, args.vi_dir)
    reports = _eval_reports(model, pairs, _max_workers(len(pairs)))
    _write_metric_csv(args.out_csv, [p[0] for p in pairs], reports)
    print(f"wrote {len(pairs)} pair rows + mean to {args.out_csv}")
    return 0


# ---------------------------------------------------------------------------
# inspection


def _normalize_heatmap(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def cmd_inspect_cov(args) -> int:
    model = load_checkpoint(args.ckpt) if args.ckpt else None
    if model is not None:
        geom = model.geometry
        ir = _load_sized(args.ir, geom.image_h, geom.image_w)
        vi = _load_sized(args.vi, geom.image_h, geom.image_w)
        cov_eps = model.cov_eps
    else:
        ir = load_image(args.ir)
        vi = load_image(args.vi)
        if ir.shape != vi.shape:
            raise DataError(f"source sizes differ: {ir.shape} vs {vi.shape}")
        geom = PatchGeometry(image_h=ir.shape[0], image_w=ir.shape[1])
        cov_eps = 1e-3
    pm_ir = extract_patches(ir, geom)
    pm_vi = extract_patches(vi, geom)
    comp = composite_covariance(pm_ir.rows, pm_vi.rows, eps=cov_eps)

    prefix = Path(args.out_prefix)
    ensure_dir(prefix.parent)
    blocks = [
        ("c_irir", comp.c_irir),
        ("c_irvi", comp.c_irvi),
        ("c_viir", comp.c_viir),
        ("c_vivi", comp.c_vivi),
    ]
    if model is not None:
        c_input, _raw = build_covariance(model, pm_ir, pm_vi)
        blocks.append(("xk", model.spdnet.forward(c_input)))
    for name, block in blocks:
        save_matrix(block, f"{prefix}_{name}.bin")
        save_image(_normalize_heatmap(block), f"{prefix}_{name}.pgm")
        print(f"{name}: {block.shape[0]}x{block.shape[1]} -> {prefix}_{name}.bin/.pgm")
    return 0


def cmd_diagnose(args) -> int:
    model = load_checkpoint(args.ckpt) if args.ckpt else None
    if model is not None:
        geom = model.geometry
        ir = _load_sized(args.ir, geom.image_h, geom.image_w)
        vi = _load_sized(args.vi, geom.image_h, geom.image_w)
        cov_eps = model.cov_eps
    else:
        ir = load_image(args.ir)
        vi = load_image(args.vi)
        if ir.shape != vi.shape:
            raise DataError(f"source sizes differ: {ir.shape} vs {vi.shape}")
        geom = PatchGeometry(image_h=ir.shape[0], image_w=ir.shape[1])
        cov_eps = 1e-3
    pm_ir = extract_patches(ir, geom)
    pm_vi = extract_patches(vi, geom)
    comp = composite_covariance(pm_ir.rows, pm_vi.rows, eps=cov_eps)
    points = model.spdnet.forward(comp.c) if model is not None else comp.raw

    n = geom.n_patches
    labels = np.array([1] * n + [2] * n)
    ps = PointSet(points=np.asarray(points), labels=labels)
    ss = silhouette(ps)
    ratio = imdr(ps)
    nnr = cm_nnr(ps, k=args.k)
    print(f"ss={_fmt(ss)}")
    print(f"imdr={_fmt(ratio)}")
    print(f"cm_nnr={_fmt(nnr)}")

    with open(args.out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", *(f"d{i}" for i in range(points.shape[1]))])
        for lab, row in zip(labels, points):
            writer.writerow([lab, *(_fmt(v) for v in row)])
    print(f"wrote {2 * n} point rows to {args.out_csv}")
    return 0


# ---------------------------------------------------------------------------
# ablation


_GRID_KEYS = ("reeig_eps", "depth", "strategy")


def _parse_grid(text: str):
    if "=" not in text:
        raise UsageError(f"grid must look like key=v1,v2,... got {text!r}")
    key, _, rest = text.partition("=")
    key = key.strip()
    if key not in _GRID_KEYS:
        raise UsageError(f"unknown grid key {key!r}; valid: {', '.join(_GRID_KEYS)}")
    raw_values = [v.strip() for v in rest.split(",") if v.strip()]
    if not raw_values:
        raise UsageError(f"grid for {key!r} has no values")
    if key == "reeig_eps":
        try:
            return key, [float(v) for v in raw_values]
        except ValueError as exc:
            raise UsageError(f"bad reeig_eps value in grid: {rest!r}") from exc
    if key == "depth":
        try:
            return key, [int(v) for v in raw_values]
        except ValueError as exc:
            raise UsageError(f"bad depth value in grid: {rest!r}") from exc
    for v in raw_values:
        if v not in STRATEGIES:
            raise UsageError(f"unknown strategy {v!r}; valid: {', '.join(STRATEGIES)}")
    return key, raw_values


def cmd_ablate(args) -> int:
    cfg = parse_config(args.config)
    key, values = _parse_grid(args.grid)
    out_dir = ensure_dir(cfg.out_dir)
    pairs = list_pairs(cfg.ir_dir, cfg.vi_dir)

    result_rows = []
    for value in values:
        strategy = "cross"
        cfg_i = cfg
        if key == "strategy":
            strategy = value
        else:
            cfg_i = replace(cfg, **{key: value})
        run_dir = ensure_dir(out_dir / f"ablate_{key}_{value}")
        model = train_run(
            cfg_i,
            strategy=strategy,
            ckpt_path=run_dir / CHECKPOINT_NAME,
            loss_csv_path=run_dir / "loss_curve.csv",
        )

        # dump the first pair's raw covariance so strategies can be compared
        geom = model.geometry
        ir = _load_sized(pairs[0][1], geom.image_h, geom.image_w)
        vi = _load_sized(pairs[0][2], geom.image_h, geom.image_w)
        _c, raw = build_covariance(model, extract_patches(ir, geom), extract_patches(vi, geom))
        save_matrix(raw, run_dir / "cov_raw.bin")

        reports = _eval_reports(model, pairs, workers=1)
        means = np.mean([r.values() for r in reports], axis=0)
        result_rows.append([key, str(value), *(_fmt(v) for v in means)])

    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "value", *MetricReport.FIELDS])
        writer.writerows(result_rows)
    for row in result_rows:
        print(" ".join(row))
    print(f"wrote {len(result_rows)} grid rows to {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spdfuse", description="Cross-modal image fusion on the SPD manifold")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a fusion model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="fuse one infrared/visible pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ir", required=True)
    p.add_argument("--vi", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="fuse a dataset and write a metrics CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ir-dir", required=True)
    p.add_argument("--vi-dir", required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-cov", help="dump composite covariance quadrants")
    p.add_argument("--ir", required=True)
    p.add_argument("--vi", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--ckpt", default=None)
    p.set_defaults(func=cmd_inspect_cov)

    p = sub.add_parser("diagnose", help="modality-mixing diagnostics of covariance rows")
    p.add_argument("--ir", required=True)
    p.add_argument("--vi", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--k", type=int, default=10, help="neighbors for cm_nnr")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("ablate", help="train/evaluate a grid of one knob")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="key=v1,v2,... over reeig_eps|depth|strategy")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SpdFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
