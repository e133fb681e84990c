"""Three-stage convolutional decoder turning the two weighted feature maps
into one fused image.

Channel plan 2 -> 16 -> 16 -> 1 with 3x3 kernels, zero padding 1, LeakyReLU
(slope 0.2) after the first two stages, and a sigmoid squash to (0, 1) at
the end. Convolutions run through im2col so the backward pass is a pair of
matrix products plus a column scatter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import MissingCache, SizeMismatch

LEAKY_SLOPE = 0.2
CHANNEL_PLAN = (2, 16, 16, 1)
KSIZE = 3


def _im2col(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C*9, H*W) column matrix of zero-padded 3x3 windows."""
    c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (KSIZE, KSIZE), axis=(1, 2))
    # (C, H, W, 3, 3) -> (C*9, H*W)
    return windows.transpose(0, 3, 4, 1, 2).reshape(c * KSIZE * KSIZE, h * w)


def _col2im(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back onto the padded image."""
    padded = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    g = cols.reshape(c, KSIZE, KSIZE, h, w)
    for dy in range(KSIZE):
        for dx in range(KSIZE):
            padded[:, dy : dy + h, dx : dx + w] += g[:, dy, dx]
    return padded[:, 1 : 1 + h, 1 : 1 + w]


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


@dataclass
class ConvDecoder:
    kernels: list[np.ndarray]  # stage k: (C_out, C_in, 3, 3)
    biases: list[np.ndarray]   # stage k: (C_out,)
    _cache: dict | None = field(default=None, repr=False)

    @property
    def n_stages(self) -> int:
        return len(self.kernels)

    def params(self) -> list[np.ndarray]:
        return list(self.kernels) + list(self.biases)

    def set_params(self, flat: list[np.ndarray]) -> None:
        n = self.n_stages
        self.kernels = [np.asarray(p, dtype=np.float64) for p in flat[:n]]
        self.biases = [np.asarray(p, dtype=np.float64) for p in flat[n:]]

    def forward(self, f_ir: np.ndarray, f_vi: np.ndarray) -> np.ndarray:
        if f_ir.shape != f_vi.shape:
            raise SizeMismatch(f"feature shapes differ: {f_ir.shape} vs {f_vi.shape}")
        x = np.stack([f_ir, f_vi]).astype(np.float64)
        h, w = x.shape[1], x.shape[2]
        cols: list[np.ndarray] = []
        pre_acts: list[np.ndarray] = []
        for k, (kern, bias) in enumerate(zip(self.kernels, self.biases)):
            c_out, c_in = kern.shape[0], kern.shape[1]
            col = _im2col(x)
            z = (kern.reshape(c_out, c_in * KSIZE * KSIZE) @ col) + bias[:, None]
            z = z.reshape(c_out, h, w)
            cols.append(col)
            pre_acts.append(z)
            if k < self.n_stages - 1:
                x = np.where(z > 0, z, LEAKY_SLOPE * z)
            else:
                x = expit(z)
        out = x[0]
        self._cache = {"cols": cols, "pre_acts": pre_acts, "out": out, "hw": (h, w)}
        return out

    def backward(self, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Returns (gradients per parameter in params() order, grad of the
        stacked (2, H, W) input features)."""
        if self._cache is None:
            raise MissingCache("decoder backward called before forward")
        cols = self._cache["cols"]
        pre_acts = self._cache["pre_acts"]
        h, w = self._cache["hw"]
        out = self._cache["out"]

        g = np.asarray(upstream, dtype=np.float64)[None] * (out * (1.0 - out))[None]
        kernel_grads: list[np.ndarray] = [np.empty(0)] * self.n_stages
        bias_grads: list[np.ndarray] = [np.empty(0)] * self.n_stages
        for k in range(self.n_stages - 1, -1, -1):
            if k < self.n_stages - 1:
                z = pre_acts[k]
                g = g * np.where(z > 0, 1.0, LEAKY_SLOPE)
            kern = self.kernels[k]
            c_out, c_in = kern.shape[0], kern.shape[1]
            g_mat = g.reshape(c_out, h * w)
            kernel_grads[k] = (g_mat @ cols[k].T).reshape(kern.shape)
            bias_grads[k] = g_mat.sum(axis=1)
            col_grad = kern.reshape(c_out, c_in * KSIZE * KSIZE).T @ g_mat
            g = _col2im(col_grad, c_in, h, w)
        return kernel_grads + bias_grads, g


def init_decoder(rng: np.random.Generator, std: float = 0.1) -> ConvDecoder:
    """Seeded Gaussian kernels (std 0.1), zero biases."""
    kernels, biases = [], []
    for c_in, c_out in zip(CHANNEL_PLAN[:-1], CHANNEL_PLAN[1:]):
        kernels.append(rng.normal(0.0, std, size=(c_out, c_in, KSIZE, KSIZE)))
        biases.append(np.zeros(c_out))
    return ConvDecoder(kernels=kernels, biases=biases)


def init_adam(dec: ConvDecoder) -> AdamState:
    params = dec.params()
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        t=0,
    )


def adam_step(
    dec: ConvDecoder,
    grads: list[np.ndarray],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected adaptive-moment update, in place."""
    params = dec.params()
    state.t += 1
    t = state.t
    new_params = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m[...] = beta1 * m + (1.0 - beta1) * g
        v[...] = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    dec.set_params(new_params)
