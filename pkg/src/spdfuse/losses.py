"""The four training losses with analytic gradients: intensity, gradient
magnitude, structural similarity, and feature-covariance alignment.

Every loss returns (value, gradient w.r.t. the fused image). The feature
extractor behind the covariance loss is pluggable; the default is a fixed
bank of classical filters applied at two scales, and precomputed feature
maps can be loaded from files for value-only evaluation against an
external backbone.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import convops
from .errors import CorruptFile, NonFiniteLoss, SizeMismatch, TooSmall
from .spd import covariance

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

_SSIM_WIN = convops.gaussian_kernel2d(SSIM_WINDOW, SSIM_SIGMA)


def _check_sizes(*imgs: np.ndarray) -> None:
    shape = imgs[0].shape
    for im in imgs[1:]:
        if im.shape != shape:
            raise SizeMismatch(f"image shapes differ: {shape} vs {im.shape}")


@dataclass(frozen=True)
class LossReport:
    l_int: float
    l_grad: float
    l_ssim: float
    l_cov: float
    total: float


# ---------------------------------------------------------------------------
# intensity


def loss_int(f: np.ndarray, ir: np.ndarray, vi: np.ndarray):
    """Mean absolute deviation from the elementwise source maximum."""
    _check_sizes(f, ir, vi)
    n = f.size
    r = f - np.maximum(ir, vi)
    return float(np.abs(r).sum() / n), np.sign(r) / n


# ---------------------------------------------------------------------------
# gradient magnitude


def _sobel_mag(img: np.ndarray):
    gx = convops.correlate_same(img, convops.SOBEL_X)
    gy = convops.correlate_same(img, convops.SOBEL_Y)
    return np.hypot(gx, gy), gx, gy


def loss_grad(f: np.ndarray, ir: np.ndarray, vi: np.ndarray):
    """Mean absolute difference between the fused Sobel magnitude and the
    stronger of the two source magnitudes."""
    _check_sizes(f, ir, vi)
    h, w = f.shape
    n = f.size
    mag_f, gx, gy = _sobel_mag(f)
    target = np.maximum(_sobel_mag(ir)[0], _sobel_mag(vi)[0])
    r = mag_f - target
    value = float(np.abs(r).sum() / n)
    s = np.sign(r) / n
    inv = np.where(mag_f > 0, 1.0 / np.where(mag_f > 0, mag_f, 1.0), 0.0)
    grad = convops.correlate_same_adjoint(s * gx * inv, convops.SOBEL_X, h, w)
    grad += convops.correlate_same_adjoint(s * gy * inv, convops.SOBEL_Y, h, w)
    return value, grad


# ---------------------------------------------------------------------------
# structural similarity


def _ssim_with_grad(x: np.ndarray, y: np.ndarray):
    """Mean SSIM over valid 11x11 Gaussian windows and its gradient in x."""
    win = _SSIM_WIN
    mu_x = convops.correlate_valid(x, win)
    mu_y = convops.correlate_valid(y, win)
    sx = convops.correlate_valid(x * x, win)
    sy = convops.correlate_valid(y * y, win)
    sxy = convops.correlate_valid(x * y, win)
    var_x = sx - mu_x**2
    var_y = sy - mu_y**2
    cov_xy = sxy - mu_x * mu_y

    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * cov_xy + SSIM_C2
    b1 = mu_x**2 + mu_y**2 + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    d = b1 * b2
    s = (a1 * a2) / d
    m = s.size

    # partials w.r.t. the filtered window statistics
    ds_dvarx = -s / b2
    ds_dcov = 2.0 * a1 / d
    ds_dmux = 2.0 * mu_y * (a2 - a1) / d - 2.0 * mu_x * s / b1 + 2.0 * mu_x * s / b2

    adj = convops.correlate_valid_adjoint
    grad = adj(ds_dmux / m, win)
    grad += adj(ds_dvarx / m, win) * (2.0 * x)
    grad += adj(ds_dcov / m, win) * y
    return float(s.mean()), grad


def loss_ssim(f: np.ndarray, ir: np.ndarray, vi: np.ndarray):
    """(1 - ssim(f, vi)) + (1 - ssim(f, ir)) on the [0,1] dynamic range."""
    _check_sizes(f, ir, vi)
    if min(f.shape) < SSIM_WINDOW:
        raise TooSmall(
            f"image {f.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )
    s_vi, g_vi = _ssim_with_grad(f, vi)
    s_ir, g_ir = _ssim_with_grad(f, ir)
    return float((1.0 - s_vi) + (1.0 - s_ir)), -(g_vi + g_ir)


# ---------------------------------------------------------------------------
# feature-covariance alignment


class FixedFilterBank:
    """Four classical filters at two scales: full resolution and one 2x
    average-pooled level. Filters never change, so identical inputs always
    produce identical features."""

    name = "default"
    n_levels = 2

    def __init__(self):
        self.filters = [
            convops.SOBEL_X,
            convops.SOBEL_Y,
            convops.LAPLACIAN,
            convops.GAUSS5,
        ]

    def features(self, img: np.ndarray) -> list[np.ndarray]:
        """Per level, a (C, h, w) stack of filter responses."""
        levels = [img, convops.avgpool2(img)]
        return [
            np.stack([convops.correlate_same(x, k) for k in self.filters])
            for x in levels
        ]

    def backward(self, img_shape, upstream: list[np.ndarray]) -> np.ndarray:
        """Adjoint of features(): per-level filter adjoints, pooled level
        routed back through the average-pool transpose."""
        h, w = img_shape
        grad = np.zeros((h, w), dtype=np.float64)
        for c, k in enumerate(self.filters):
            grad += convops.correlate_same_adjoint(upstream[0][c], k, h, w)
        hp, wp = upstream[1].shape[1:]
        g_pool = np.zeros((hp, wp), dtype=np.float64)
        for c, k in enumerate(self.filters):
            g_pool += convops.correlate_same_adjoint(upstream[1][c], k, hp, wp)
        grad += convops.avgpool2_adjoint(g_pool, h, w)
        return grad


def make_bank(name: str) -> FixedFilterBank:
    if name != "default":
        raise ValueError(f"unknown feature bank {name!r}")
    return FixedFilterBank()


def _channel_cov_with_grad(feats: np.ndarray):
    """Channel covariance of a (C, h, w) stack plus a closure for its
    gradient given dL/dCov."""
    c = feats.shape[0]
    x = feats.reshape(c, -1)
    n = x.shape[1]
    cov = covariance(x)

    centered = x - x.mean(axis=1, keepdims=True)

    def backward(g_cov: np.ndarray) -> np.ndarray:
        gx = (g_cov + g_cov.T) @ centered / (n - 1)
        gx -= gx.mean(axis=1, keepdims=True)
        return gx.reshape(feats.shape)

    return cov, backward


def loss_cov(f: np.ndarray, ir: np.ndarray, bank: FixedFilterBank):
    """Entrywise-absolute gap between the channel covariances of the fused
    and reference feature stacks, summed over scale levels."""
    _check_sizes(f, ir)
    feats_f = bank.features(f)
    feats_ir = bank.features(ir)
    value = 0.0
    upstream: list[np.ndarray] = []
    for lf, lir in zip(feats_f, feats_ir):
        cov_f, back = _channel_cov_with_grad(lf)
        cov_ir, _ = _channel_cov_with_grad(lir)
        diff = cov_f - cov_ir
        value += float(np.abs(diff).sum())
        upstream.append(back(np.sign(diff)))
    grad = bank.backward(f.shape, upstream)
    return value, grad


def loss_cov_from_features(feats_f: list[np.ndarray], feats_ref: list[np.ndarray]) -> float:
    """Value-only covariance loss over precomputed feature stacks."""
    value = 0.0
    for lf, lref in zip(feats_f, feats_ref):
        cov_f, _ = _channel_cov_with_grad(lf)
        cov_r, _ = _channel_cov_with_grad(lref)
        value += float(np.abs(cov_f - cov_r).sum())
    return value


# ---------------------------------------------------------------------------
# combined objective


def total_loss(
    f: np.ndarray,
    ir: np.ndarray,
    vi: np.ndarray,
    bank: FixedFilterBank,
    alpha: float = 1.0,
    beta: float = 10.0,
    gamma: float = 20.0,
    cov_symmetric: bool = False,
):
    """Weighted sum of the four losses and its gradient w.r.t. f.

    cov_symmetric adds a visible-reference covariance term next to the
    default infrared one.
    """
    v_int, g_int = loss_int(f, ir, vi)
    v_grad, g_grad = loss_grad(f, ir, vi)
    v_ssim, g_ssim = loss_ssim(f, ir, vi)
    v_cov, g_cov = loss_cov(f, ir, bank)
    if cov_symmetric:
        v2, g2 = loss_cov(f, vi, bank)
        v_cov += v2
        g_cov = g_cov + g2
    total = v_int + alpha * v_grad + beta * v_ssim + gamma * v_cov
    if not np.isfinite(total):
        raise NonFiniteLoss(
            f"loss is not finite: int={v_int} grad={v_grad} ssim={v_ssim} cov={v_cov}"
        )
    grad = g_int + alpha * g_grad + beta * g_ssim + gamma * g_cov
    report = LossReport(
        l_int=v_int, l_grad=v_grad, l_ssim=v_ssim, l_cov=v_cov, total=total
    )
    return report, grad


# ---------------------------------------------------------------------------
# precomputed-feature files


def save_features(path, feats: list[np.ndarray]) -> None:
    """Header: level count, then (C, H, W) per level; body: little-endian
    float64 stacks in level order."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(feats)))
        for level in feats:
            c, h, w = level.shape
            fh.write(struct.pack("<III", c, h, w))
        for level in feats:
            fh.write(np.ascontiguousarray(level, dtype="<f8").tobytes())


def load_features(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise CorruptFile(f"feature file truncated at byte {off}")
        chunk = raw[off : off + n]
        off += n
        return chunk

    (n_levels,) = struct.unpack("<I", take(4))
    shapes = [struct.unpack("<III", take(12)) for _ in range(n_levels)]
    feats = []
    for c, h, w in shapes:
        data = np.frombuffer(take(8 * c * h * w), dtype="<f8")
        feats.append(data.reshape(c, h, w).astype(np.float64))
    if off != len(raw):
        raise CorruptFile(f"{len(raw) - off} trailing bytes in feature file")
    return feats
