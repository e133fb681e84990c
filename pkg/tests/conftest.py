"""Shared fixtures and independent oracle helpers for the test suite.

Gradient tests never reuse the library's backward passes as their own
reference: every derivative is checked against central finite differences
computed here, and every aggregate value against a naive loop oracle.
"""

from __future__ import annotations

import numpy as np
import pytest


def rand_spd(rng: np.random.Generator, n: int, spread: float = 1.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues bounded away from zero."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    vals = 0.5 + spread * rng.random(n)
    return q @ np.diag(vals) @ q.T


def rand_spd_distinct(rng: np.random.Generator, n: int, gap: float = 0.3) -> np.ndarray:
    """Random SPD matrix whose eigenvalue gaps are at least ``gap``."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    vals = 0.5 + gap * np.arange(1, n + 1) + 0.1 * gap * rng.random(n)
    return q @ np.diag(vals) @ q.T


def fd_scalar(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    g = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    """Relative error with a floor so zero references do not blow up."""
    scale = max(np.linalg.norm(want), 1e-12)
    return float(np.linalg.norm(np.asarray(got) - np.asarray(want)) / scale)


def make_pair(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Structured synthetic infrared/visible pair in [0, 1]."""
    y, x = np.mgrid[0:size, 0:size].astype(float) / max(size - 1, 1)
    ir = 0.5 + 0.4 * np.sin(6.0 * x) * np.cos(4.0 * y)
    vi = 0.5 + 0.4 * np.cos(5.0 * x + 2.0 * y)
    ir = ir + 0.05 * rng.standard_normal((size, size))
    vi = vi + 0.05 * rng.standard_normal((size, size))
    return np.clip(ir, 0.0, 1.0), np.clip(vi, 0.0, 1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260814)
