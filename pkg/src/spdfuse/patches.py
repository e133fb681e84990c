"""Overlapping patch extraction and its exact inverse.

Images are reflect-padded, cut into overlapping square windows, and each
window becomes one row vector. Folding puts rows back by averaging every
pixel's covering patches; with the default 16/8/8 geometry the coverage
counts are powers of two, and the summation is bracketed so that fold
after extract reproduces the image bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GeometryMismatch


@dataclass(frozen=True)
class PatchGeometry:
    """Window layout over a fixed image size.

    Patch positions are enumerated top-to-bottom, then left-to-right, so
    the patch index is column-major over the (row, column) start grid.
    """

    patch_size: int = 16
    stride: int = 8
    pad: int = 8
    image_h: int = 256
    image_w: int = 256

    def __post_init__(self):
        if self.patch_size <= 0 or self.stride <= 0 or self.pad < 0:
            raise GeometryMismatch(
                f"patch_size/stride must be positive, pad nonnegative: "
                f"{self.patch_size}/{self.stride}/{self.pad}"
            )
        if self.stride > self.patch_size:
            raise GeometryMismatch(
                f"stride {self.stride} exceeds patch size {self.patch_size}"
            )
        for name, size in (("height", self.image_h), ("width", self.image_w)):
            span = size + 2 * self.pad - self.patch_size
            if size <= 0 or span < 0 or span % self.stride != 0:
                raise GeometryMismatch(
                    f"image {name} {size} incompatible with "
                    f"patch {self.patch_size}, stride {self.stride}, pad {self.pad}"
                )

    @property
    def padded_h(self) -> int:
        return self.image_h + 2 * self.pad

    @property
    def padded_w(self) -> int:
        return self.image_w + 2 * self.pad

    @property
    def grid_h(self) -> int:
        return (self.padded_h - self.patch_size) // self.stride + 1

    @property
    def grid_w(self) -> int:
        return (self.padded_w - self.patch_size) // self.stride + 1

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_len(self) -> int:
        return self.patch_size * self.patch_size


@dataclass(frozen=True)
class PatchMatrix:
    """One row per patch, rows of length patch_size squared."""

    rows: np.ndarray
    geom: PatchGeometry

    @property
    def n(self) -> int:
        return self.rows.shape[0]


def extract_patches(img: np.ndarray, geom: PatchGeometry) -> PatchMatrix:
    """Cut a reflect-padded image into overlapping row-major patch rows."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (geom.image_h, geom.image_w):
        raise GeometryMismatch(
            f"image shape {img.shape} does not match geometry "
            f"({geom.image_h}, {geom.image_w})"
        )
    if geom.pad > 0 and min(img.shape) < 2:
        raise GeometryMismatch("reflect padding needs at least 2 pixels per side")
    padded = np.pad(img, geom.pad, mode="reflect") if geom.pad else img
    p, s = geom.patch_size, geom.stride
    windows = sliding_window_view(padded, (p, p))[::s, ::s]
    # column-major enumeration: sweep down each column of starts, then right
    rows = windows.transpose(1, 0, 2, 3).reshape(geom.n_patches, geom.patch_len)
    return PatchMatrix(rows=np.ascontiguousarray(rows), geom=geom)


def _coverage_1d(geom: PatchGeometry, padded_len: int, grid_len: int):
    """Per-coordinate covering-window count, first covering start, and width."""
    t = np.arange(padded_len)
    j_min = np.maximum(0, -((geom.patch_size - 1 - t) // geom.stride))
    j_max = np.minimum(grid_len - 1, t // geom.stride)
    return j_min, j_max - j_min + 1


def _fold_maps(geom: PatchGeometry):
    """Flat slot indices and coverage counts for the layered fold canvas.

    Every (patch, offset) contribution lands in its own slot of an
    (ncy, ncx, padded_h, padded_w) array, indexed by the patch's rank among
    the windows covering that pixel along each axis. One write per slot:
    no accumulation order to worry about.
    """
    p, s = geom.patch_size, geom.stride
    gh, gw = geom.grid_h, geom.grid_w
    hp, wp = geom.padded_h, geom.padded_w

    jmin_y, cover_y = _coverage_1d(geom, hp, gh)
    jmin_x, cover_x = _coverage_1d(geom, wp, gw)
    ncy, ncx = int(cover_y.max()), int(cover_x.max())

    pidx = np.arange(geom.n_patches)
    y = pidx % gh
    x = pidx // gh
    off = np.arange(geom.patch_len)
    a, b = off // p, off % p

    ty = y[:, None] * s + a[None, :]
    tx = x[:, None] * s + b[None, :]
    ry = y[:, None] - jmin_y[ty]
    rx = x[:, None] - jmin_x[tx]
    slots = ((ry * ncx + rx) * hp + ty) * wp + tx
    counts = (cover_y[:, None] * cover_x[None, :]).astype(np.float64)
    return slots, counts, ncy * ncx


def _pairwise_layer_sum(layers: np.ndarray) -> np.ndarray:
    """Sum over the first axis with explicit binary bracketing.

    Equal values in power-of-two coverage groups add without rounding, which
    is what makes the fold round trip exact.
    """
    while layers.shape[0] > 1:
        if layers.shape[0] % 2:
            layers = np.concatenate([layers, np.zeros_like(layers[:1])])
        layers = layers[0::2] + layers[1::2]
    return layers[0]


def fold_patches(pm: PatchMatrix) -> np.ndarray:
    """Average overlapping patch rows back into an image; inverse of extract."""
    geom = pm.geom
    rows = np.asarray(pm.rows, dtype=np.float64)
    if rows.shape != (geom.n_patches, geom.patch_len):
        raise GeometryMismatch(
            f"rows shape {rows.shape} does not match geometry "
            f"({geom.n_patches}, {geom.patch_len})"
        )
    slots, counts, n_layers = _fold_maps(geom)
    layers = np.zeros((n_layers, geom.padded_h, geom.padded_w), dtype=np.float64)
    layers.reshape(-1)[slots.reshape(-1)] = rows.reshape(-1)
    canvas = _pairwise_layer_sum(layers) / counts
    p = geom.pad
    return canvas[p : p + geom.image_h, p : p + geom.image_w].copy()


def fold_patches_backward(upstream: np.ndarray, geom: PatchGeometry) -> np.ndarray:
    """Gradient of fold_patches with respect to the patch rows.

    Fold is linear; each row entry receives its pixel's upstream value
    divided by that pixel's coverage count.
    """
    canvas = np.zeros((geom.padded_h, geom.padded_w), dtype=np.float64)
    p = geom.pad
    canvas[p : p + geom.image_h, p : p + geom.image_w] = upstream
    _, cover_y = _coverage_1d(geom, geom.padded_h, geom.grid_h)
    _, cover_x = _coverage_1d(geom, geom.padded_w, geom.grid_w)
    weighted = canvas / (cover_y[:, None] * cover_x[None, :])

    s = geom.stride
    pidx = np.arange(geom.n_patches)
    y, x = pidx % geom.grid_h, pidx // geom.grid_h
    off = np.arange(geom.patch_len)
    a, b = off // geom.patch_size, off % geom.patch_size
    ty = y[:, None] * s + a[None, :]
    tx = x[:, None] * s + b[None, :]
    return weighted[ty, tx]
