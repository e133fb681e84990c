"""Fusion-quality metrics and distribution diagnostics.

The seven image metrics follow fusion-literature convention: images are
quantized to the 8-bit scale first, histogram metrics use 256 bins, VIF is
the pixel-domain multi-scale variant, and the edge-transfer score weights
per-pixel strength/orientation preservation by source edge strength.

The diagnostics treat covariance rows as labeled points and measure how
thoroughly the two modalities mix: silhouette, inter/intra distance ratio,
and the cross-modal fraction of k nearest neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import convops
from .errors import DegenerateSet, KTooLarge, ZeroIntra

VIF_SIGMA_NSQ = 2.0
_EPS = 1e-10


def _quantize(img: np.ndarray) -> np.ndarray:
    """Round onto the 0..255 scale (kept as float64)."""
    return np.round(255.0 * np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0))


def _hist(q: np.ndarray) -> np.ndarray:
    return np.bincount(q.astype(np.int64).ravel(), minlength=256)


@dataclass(frozen=True)
class MetricReport:
    en: float
    mi: float
    sd: float
    sf: float
    vif: float
    ag: float
    qabf: float

    FIELDS = ("en", "mi", "sd", "sf", "vif", "ag", "qabf")

    def values(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def en(img: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin histogram."""
    p = _hist(_quantize(img)) / img.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _mi_pair(a: np.ndarray, b: np.ndarray) -> float:
    qa = _quantize(a).astype(np.int64).ravel()
    qb = _quantize(b).astype(np.int64).ravel()
    joint = np.bincount(qa * 256 + qb, minlength=256 * 256).reshape(256, 256)
    p_xy = joint / qa.size
    p_x = p_xy.sum(axis=1)
    p_y = p_xy.sum(axis=0)
    mask = p_xy > 0
    ratio = p_xy[mask] / (np.outer(p_x, p_y)[mask])
    return float((p_xy[mask] * np.log2(ratio)).sum())


def mi(f: np.ndarray, ir: np.ndarray, vi: np.ndarray) -> float:
    """Joint-histogram mutual information of the fused image with each source."""
    return _mi_pair(f, ir) + _mi_pair(f, vi)


def sd(img: np.ndarray) -> float:
    """Population standard deviation on the 8-bit scale."""
    q = _quantize(img)
    return float(np.sqrt(np.mean((q - q.mean()) ** 2)))


def sf(img: np.ndarray) -> float:
    """Spatial frequency from row-to-row and column-to-column differences."""
    q = _quantize(img)
    rf_sq = np.mean((q[1:, :] - q[:-1, :]) ** 2)
    cf_sq = np.mean((q[:, 1:] - q[:, :-1]) ** 2)
    return float(np.sqrt(rf_sq + cf_sq))


def ag(img: np.ndarray) -> float:
    """Average gradient over forward differences, 8-bit scale."""
    q = _quantize(img)
    dx = q[:, 1:] - q[:, :-1]
    dy = q[1:, :] - q[:-1, :]
    dx = dx[:-1, :]
    dy = dy[:, :-1]
    return float(np.mean(np.sqrt((dx**2 + dy**2) / 2.0)))


def vif(f: np.ndarray, ref: np.ndarray) -> float:
    """Pixel-domain visual information fidelity of f against one source.

    Four scales with Gaussian windows of size 2^(5-s)+1; scale-space noise
    variance 2 on the 8-bit range. Returns 0 on a zero information
    denominator (constant reference).
    """
    dist = _quantize(f)
    src = _quantize(ref)
    num = 0.0
    den = 0.0
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        win = convops.gaussian_kernel2d(n, n / 5.0)
        if scale > 1:
            if min(src.shape) < n:
                break
            src = convops.correlate_valid(src, win)[::2, ::2]
            dist = convops.correlate_valid(dist, win)[::2, ::2]
        if min(src.shape) < n:
            break
        mu1 = convops.correlate_valid(src, win)
        mu2 = convops.correlate_valid(dist, win)
        sigma1_sq = convops.correlate_valid(src * src, win) - mu1**2
        sigma2_sq = convops.correlate_valid(dist * dist, win) - mu2**2
        sigma12 = convops.correlate_valid(src * dist, win) - mu1 * mu2
        sigma1_sq = np.maximum(sigma1_sq, 0.0)
        sigma2_sq = np.maximum(sigma2_sq, 0.0)

        g = sigma12 / (sigma1_sq + _EPS)
        sv_sq = sigma2_sq - g * sigma12

        low1 = sigma1_sq < _EPS
        g = np.where(low1, 0.0, g)
        sv_sq = np.where(low1, sigma2_sq, sv_sq)
        sigma1_sq = np.where(low1, 0.0, sigma1_sq)
        low2 = sigma2_sq < _EPS
        g = np.where(low2, 0.0, g)
        sv_sq = np.where(low2, 0.0, sv_sq)
        neg = g < 0
        sv_sq = np.where(neg, sigma2_sq, sv_sq)
        g = np.where(neg, 0.0, g)
        sv_sq = np.maximum(sv_sq, _EPS)

        num += float(np.log10(1.0 + g**2 * sigma1_sq / (sv_sq + VIF_SIGMA_NSQ)).sum())
        den += float(np.log10(1.0 + sigma1_sq / VIF_SIGMA_NSQ).sum())
    if den == 0.0:
        return 0.0
    return num / den


def _edge_strength_angle(img: np.ndarray):
    gx = convops.correlate_same(img, convops.SOBEL_X)
    gy = convops.correlate_same(img, convops.SOBEL_Y)
    return np.hypot(gx, gy), np.arctan2(gy, gx)


def qabf(f: np.ndarray, ir: np.ndarray, vi: np.ndarray) -> float:
    """Edge-transfer score in [0, 1]: per-pixel product of strength-ratio and
    orientation-agreement preservation, weighted by source edge strength.
    Returns 0 when no source edges exist."""
    gf, af = _edge_strength_angle(_quantize(f))
    q_total = 0.0
    w_total = 0.0
    for src in (ir, vi):
        gs, as_ = _edge_strength_angle(_quantize(src))
        hi = np.maximum(gs, gf)
        lo = np.minimum(gs, gf)
        q_g = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 0.0)
        delta = np.abs(as_ - af)
        delta = np.minimum(delta, 2.0 * np.pi - delta)
        q_a = np.maximum(0.0, 1.0 - delta / (np.pi / 2.0))
        q_total += float((q_g * q_a * gs).sum())
        w_total += float(gs.sum())
    if w_total == 0.0:
        return 0.0
    return q_total / w_total


def compute_all(f: np.ndarray, ir: np.ndarray, vi: np.ndarray) -> MetricReport:
    """All seven metrics; VIF is the mean of the two per-source values."""
    return MetricReport(
        en=en(f),
        mi=mi(f, ir, vi),
        sd=sd(f),
        sf=sf(f),
        vif=0.5 * (vif(f, ir) + vif(f, vi)),
        ag=ag(f),
        qabf=qabf(f, ir, vi),
    )


# ---------------------------------------------------------------------------
# distribution diagnostics


@dataclass(frozen=True)
class PointSet:
    """Row vectors labeled by source modality (1 or 2)."""

    points: np.ndarray  # (N, D)
    labels: np.ndarray  # (N,) of {1, 2}

    def __post_init__(self):
        if self.points.ndim != 2 or self.labels.shape != (self.points.shape[0],):
            raise DegenerateSet(
                f"points {self.points.shape} and labels {self.labels.shape} inconsistent"
            )

    @property
    def n(self) -> int:
        return self.points.shape[0]


def _require_two_per_modality(ps: PointSet) -> None:
    for lab in (1, 2):
        if int((ps.labels == lab).sum()) < 2:
            raise DegenerateSet(f"modality {lab} has fewer than 2 points")


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix, row by row via explicit differences.

    The per-pair arithmetic is identical to computing each distance in
    isolation, so tie patterns are reproducible against naive enumeration.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    d = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        d[i] = np.sqrt(((points[i] - points) ** 2).sum(axis=1))
    return d


def silhouette(ps: PointSet) -> float:
    """Mean of (b - a) / max(a, b): own-modality vs other-modality mean
    distance, self excluded; 0 for a point with both means zero."""
    _require_two_per_modality(ps)
    d = pairwise_distances(ps.points)
    same = ps.labels[:, None] == ps.labels[None, :]
    scores = np.empty(ps.n)
    for i in range(ps.n):
        own = same[i].copy()
        own[i] = False
        a = d[i][own].mean()
        b = d[i][~same[i]].mean()
        m = max(a, b)
        scores[i] = 0.0 if m == 0.0 else (b - a) / m
    return float(scores.mean())


def imdr(ps: PointSet) -> float:
    """Mean inter-modality pairwise distance over mean intra-modality one."""
    _require_two_per_modality(ps)
    d = pairwise_distances(ps.points)
    iu = np.triu_indices(ps.n, k=1)
    cross = ps.labels[iu[0]] != ps.labels[iu[1]]
    d_inter = d[iu][cross].mean()
    d_intra = d[iu][~cross].mean()
    if d_intra == 0.0:
        raise ZeroIntra("intra-modality distances are all zero")
    return float(d_inter / d_intra)


def cm_nnr(ps: PointSet, k: int = 10) -> float:
    """Mean fraction of the k nearest neighbors (self excluded, distance
    ties broken by lower index) that come from the other modality."""
    if k < 1 or k >= ps.n:
        raise KTooLarge(f"k={k} invalid for {ps.n} points")
    _require_two_per_modality(ps)
    d = pairwise_distances(ps.points)
    np.fill_diagonal(d, np.inf)
    fractions = np.empty(ps.n)
    for i in range(ps.n):
        order = np.argsort(d[i], kind="stable")[:k]
        fractions[i] = (ps.labels[order] != ps.labels[i]).mean()
    return float(fractions.mean())
