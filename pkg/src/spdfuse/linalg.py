"""Dense symmetric linear algebra: eigendecomposition, SVD, and the
spectral-function backward rule that every manifold-layer gradient uses.

All functions are pure and deterministic for identical inputs; eigenvalues
come out sorted descending with eigenvector signs canonicalized, so
checkpoints and dumps are reproducible bit for bit.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import NonFiniteInput

# Eigenvalue pairs closer than this are treated as ties; their divided
# difference is replaced by the derivative at the midpoint.
GAP_TOL = 1e-10


class EigPair(NamedTuple):
    """Eigendecomposition with values sorted descending and canonical signs."""

    values: np.ndarray   # (d,)
    vectors: np.ndarray  # (d, d), columns are eigenvectors


def sym(m: np.ndarray) -> np.ndarray:
    """Symmetric part (m + m^T) / 2."""
    return 0.5 * (m + m.T)


def check_finite(m: np.ndarray, what: str = "matrix") -> None:
    if not np.all(np.isfinite(m)):
        raise NonFiniteInput(f"{what} contains NaN or Inf")


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so the largest-magnitude entry is positive.

    argmax takes the first index on ties, which pins the sign even for
    columns with several equal-magnitude entries.
    """
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eig_sym(m: np.ndarray) -> EigPair:
    """Eigendecompose a symmetric matrix.

    Returns values sorted descending and an orthogonal matrix of column
    eigenvectors with canonical signs. The input is symmetrized first so
    round-off asymmetry cannot leak into the decomposition.
    """
    m = np.asarray(m, dtype=np.float64)
    check_finite(m)
    values, vectors = np.linalg.eigh(sym(m))
    # eigh returns ascending; stable descending sort keeps tied blocks in place
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = _canonical_signs(vectors[:, order])
    return EigPair(values, vectors)


def svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD of a square matrix: returns (U, s, V) with m = U @ diag(s) @ V.T.

    Singular values are nonnegative and sorted descending.
    """
    m = np.asarray(m, dtype=np.float64)
    check_finite(m)
    u, s, vt = np.linalg.svd(m)
    return u, s, vt.T


def eig_apply(eig: EigPair, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Reconstruct U @ diag(fn(values)) @ U.T from an eigendecomposition."""
    return (eig.vectors * fn(eig.values)) @ eig.vectors.T


def loewner(values: np.ndarray, g: Callable, gprime: Callable) -> np.ndarray:
    """Divided-difference matrix of a scalar function over eigenvalue pairs.

    P[i, j] = (g(v_i) - g(v_j)) / (v_i - v_j) when the gap exceeds GAP_TOL,
    otherwise gprime((v_i + v_j) / 2): the limit value, which keeps the
    backward rule finite at eigenvalue crossings.
    """
    v = np.asarray(values, dtype=np.float64)
    gv = g(v)
    diff_v = v[:, None] - v[None, :]
    diff_g = gv[:, None] - gv[None, :]
    near = np.abs(diff_v) <= GAP_TOL
    safe = np.where(near, 1.0, diff_v)
    p = diff_g / safe
    mid = 0.5 * (v[:, None] + v[None, :])
    return np.where(near, gprime(mid), p)


def spectral_fn_backward(
    eig: EigPair,
    g: Callable,
    gprime: Callable,
    upstream: np.ndarray,
) -> np.ndarray:
    """Backward rule for X -> U g(Sigma) U^T given the decomposition of X.

    With G~ the symmetric part of the upstream gradient and P the Loewner
    matrix of g, returns U (P o (U^T G~ U)) U^T, which is itself symmetric.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    check_finite(upstream, "upstream gradient")
    gv = np.asarray(g(eig.values), dtype=np.float64)
    gp = np.asarray(gprime(eig.values), dtype=np.float64)
    if not (np.all(np.isfinite(gv)) and np.all(np.isfinite(gp))):
        raise NonFiniteInput("spectral function not finite on the spectrum")
    u = eig.vectors
    g_tilde = sym(upstream)
    p = loewner(eig.values, g, gprime)
    inner = u.T @ g_tilde @ u
    return sym(u @ (p * inner) @ u.T)
