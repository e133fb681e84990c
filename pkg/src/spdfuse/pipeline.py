"""End-to-end fusion: patches -> composite covariance -> manifold network
-> attention weighting -> fold -> convolutional decoder, plus the training
step that drives the two optimizers.

The manifold weights move by Riemannian SGD on the Stiefel manifold; the
decoder kernels move by an adaptive-moment step. Gradients reach the
weight matrix through the attention product only; covariance construction
is treated as fixed per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import AdamState, ConvDecoder, adam_step, init_adam, init_decoder
from .errors import DimMismatch, SizeMismatch
from .losses import FixedFilterBank, LossReport, total_loss
from .patches import (
    PatchGeometry,
    PatchMatrix,
    extract_patches,
    fold_patches,
    fold_patches_backward,
)
from .spd import (
    SpdNet,
    composite_covariance,
    covariance,
    init_stiefel,
    regularize_spd,
    stiefel_step,
)

STRATEGIES = ("cross", "single_ir", "single_vi")


@dataclass
class TrainConfig:
    lr_stiefel: float = 0.01
    lr_conv: float = 1e-4
    alpha: float = 1.0
    beta: float = 10.0
    gamma: float = 20.0
    epochs: int = 1
    seed: int = 0
    image_size: int = 256
    cov_symmetric: bool = False


@dataclass
class FusionModel:
    spdnet: SpdNet
    decoder: ConvDecoder
    geometry: PatchGeometry
    cov_eps: float = 1e-3
    strategy: str = "cross"
    adam: AdamState | None = None
    trained_epochs: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DimMismatch(f"unknown covariance strategy {self.strategy!r}")
        if self.adam is None:
            self.adam = init_adam(self.decoder)

    @property
    def expected_dim(self) -> int:
        n = self.geometry.n_patches
        return 2 * n if self.strategy == "cross" else n

    def stiefel_defect(self) -> float:
        return max(p.orth_defect() for p in self.spdnet.bimaps)


def init_model(
    geometry: PatchGeometry,
    depth: int = 1,
    reeig_eps: float = 1e-3,
    cov_eps: float = 1e-3,
    seed: int = 0,
    strategy: str = "cross",
) -> FusionModel:
    """Seeded model: orthogonal manifold weights, Gaussian decoder kernels."""
    n = geometry.n_patches
    dim = 2 * n if strategy == "cross" else n
    rng = np.random.default_rng(seed)
    bimaps = [init_stiefel(dim, rng) for _ in range(depth)]
    return FusionModel(
        spdnet=SpdNet(bimaps=bimaps, reeig_eps=reeig_eps),
        decoder=init_decoder(rng),
        geometry=geometry,
        cov_eps=cov_eps,
        strategy=strategy,
    )


def spdam_apply(
    xk: np.ndarray, stacked: np.ndarray, geom: PatchGeometry
) -> tuple[PatchMatrix, PatchMatrix]:
    """Attention product F = xk @ stacked, split back into the two
    modalities' patch matrices."""
    xk = np.asarray(xk, dtype=np.float64)
    stacked = np.asarray(stacked, dtype=np.float64)
    n = geom.n_patches
    if xk.shape != (2 * n, 2 * n) or stacked.shape[0] != 2 * n:
        raise DimMismatch(
            f"attention shapes inconsistent: xk {xk.shape}, stacked {stacked.shape}, "
            f"n_patches {n}"
        )
    f = xk @ stacked
    return PatchMatrix(rows=f[:n], geom=geom), PatchMatrix(rows=f[n:], geom=geom)


def build_covariance(model: FusionModel, pm_ir: PatchMatrix, pm_vi: PatchMatrix):
    """The SPD network input for the configured strategy.

    Returns (spd input, raw unregularized covariance). Cross-modal uses the
    stacked composite; single-modal strategies take one modality's own
    covariance and apply the learned weight to both patch matrices.
    """
    if model.strategy == "cross":
        comp = composite_covariance(pm_ir.rows, pm_vi.rows, eps=model.cov_eps)
        return comp.c, comp.raw
    rows = pm_ir.rows if model.strategy == "single_ir" else pm_vi.rows
    raw = covariance(rows)
    return regularize_spd(raw, eps=model.cov_eps), raw


def _forward(model: FusionModel, ir: np.ndarray, vi: np.ndarray) -> dict:
    ir = np.asarray(ir, dtype=np.float64)
    vi = np.asarray(vi, dtype=np.float64)
    if ir.shape != vi.shape:
        raise SizeMismatch(f"source sizes differ: {ir.shape} vs {vi.shape}")
    geom = model.geometry
    pm_ir = extract_patches(ir, geom)
    pm_vi = extract_patches(vi, geom)
    c, _raw = build_covariance(model, pm_ir, pm_vi)
    xk = model.spdnet.forward(c)

    if model.strategy == "cross":
        stacked = np.vstack([pm_ir.rows, pm_vi.rows])
        f_ir, f_vi = spdam_apply(xk, stacked, geom)
    else:
        stacked = None
        f_ir = PatchMatrix(rows=xk @ pm_ir.rows, geom=geom)
        f_vi = PatchMatrix(rows=xk @ pm_vi.rows, geom=geom)

    feat_ir = fold_patches(f_ir)
    feat_vi = fold_patches(f_vi)
    fused = model.decoder.forward(feat_ir, feat_vi)
    return {
        "fused": fused,
        "pm_ir": pm_ir,
        "pm_vi": pm_vi,
        "stacked": stacked,
    }


def fuse(model: FusionModel, ir: np.ndarray, vi: np.ndarray) -> np.ndarray:
    """Inference path; output lies in (0, 1) with the input spatial size."""
    return _forward(model, ir, vi)["fused"]


def loss_and_grads(
    model: FusionModel,
    ir: np.ndarray,
    vi: np.ndarray,
    cfg: TrainConfig,
    bank: FixedFilterBank,
) -> tuple[LossReport, list[np.ndarray], list[np.ndarray]]:
    """Forward pass plus full backward chain, no parameter updates.

    Returns the loss report, Euclidean gradients for the manifold weights,
    and gradients for the decoder parameters.
    """
    state = _forward(model, ir, vi)
    report, g_fused = total_loss(
        state["fused"],
        ir,
        vi,
        bank,
        alpha=cfg.alpha,
        beta=cfg.beta,
        gamma=cfg.gamma,
        cov_symmetric=cfg.cov_symmetric,
    )

    param_grads, g_feat = model.decoder.backward(g_fused)
    geom = model.geometry
    g_rows_ir = fold_patches_backward(g_feat[0], geom)
    g_rows_vi = fold_patches_backward(g_feat[1], geom)

    if model.strategy == "cross":
        g_f = np.vstack([g_rows_ir, g_rows_vi])
        g_xk = g_f @ state["stacked"].T
    else:
        g_xk = g_rows_ir @ state["pm_ir"].rows.T + g_rows_vi @ state["pm_vi"].rows.T

    w_grads = model.spdnet.backward(g_xk)
    return report, w_grads, param_grads


def train_step(
    model: FusionModel,
    ir: np.ndarray,
    vi: np.ndarray,
    cfg: TrainConfig,
    bank: FixedFilterBank,
) -> LossReport:
    """One full forward/backward/update pass on a single image pair.

    A non-finite loss aborts before any parameter is touched.
    """
    report, w_grads, param_grads = loss_and_grads(model, ir, vi, cfg, bank)
    for i, grad in enumerate(w_grads):
        model.spdnet.bimaps[i] = stiefel_step(
            model.spdnet.bimaps[i], grad, cfg.lr_stiefel
        )
    adam_step(model.decoder, param_grads, model.adam, lr=cfg.lr_conv)
    return report
