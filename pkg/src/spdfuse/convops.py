"""Shared 2-d filtering primitives: reflect-padded correlation, its exact
adjoint, average pooling, and the small fixed kernels used by losses and
metrics.

Forward maps here are linear, so every backward rule is the literal matrix
transpose: valid correlation's adjoint is full convolution, reflect
padding's adjoint scatter-adds pad pixels back onto their sources.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d, correlate2d

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def gaussian_kernel2d(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-d Gaussian, built separably; entries sum to 1."""
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


GAUSS5 = gaussian_kernel2d(5, 1.0)


def _reflect_index(n: int, pad: int) -> np.ndarray:
    """Source index for each position of a reflect-padded axis of length n."""
    j = np.arange(n + 2 * pad) - pad
    period = 2 * n - 2 if n > 1 else 1
    m = np.mod(j, period)
    return np.where(m > n - 1, period - m, m)


def reflect_pad(img: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return img
    return np.pad(img, pad, mode="reflect")


def reflect_pad_adjoint(grad: np.ndarray, pad: int, h: int, w: int) -> np.ndarray:
    """Transpose of reflect_pad: fold pad-region gradients onto their sources."""
    if pad == 0:
        return grad
    iy = _reflect_index(h, pad)
    ix = _reflect_index(w, pad)
    out = np.zeros((h, w), dtype=np.float64)
    np.add.at(out, (iy[:, None], ix[None, :]), grad)
    return out


def correlate_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size correlation with reflect boundary (odd kernels only)."""
    pad = kernel.shape[0] // 2
    return correlate2d(reflect_pad(img, pad), kernel, mode="valid")


def correlate_same_adjoint(
    upstream: np.ndarray, kernel: np.ndarray, h: int, w: int
) -> np.ndarray:
    """Adjoint of correlate_same with respect to the image."""
    pad = kernel.shape[0] // 2
    grad_padded = convolve2d(upstream, kernel, mode="full")
    return reflect_pad_adjoint(grad_padded, pad, h, w)


def correlate_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return correlate2d(img, kernel, mode="valid")


def correlate_valid_adjoint(upstream: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of valid correlation with respect to the image."""
    return convolve2d(upstream, kernel, mode="full")


def avgpool2(img: np.ndarray) -> np.ndarray:
    """2x2 average pooling, stride 2; trailing odd row/column dropped."""
    h2, w2 = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h2, :w2]
    return x.reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))


def avgpool2_adjoint(upstream: np.ndarray, h: int, w: int) -> np.ndarray:
    out = np.zeros((h, w), dtype=np.float64)
    hh, ww = upstream.shape
    spread = np.repeat(np.repeat(upstream, 2, axis=0), 2, axis=1) * 0.25
    out[: 2 * hh, : 2 * ww] = spread
    return out
