"""SPD manifold core: covariance construction and regularization, the
BiMap / ReEig / LogEig layers with analytic backward passes, and SGD on
the Stiefel manifold.

Covariances are built from patch row-vector matrices, pushed onto the SPD
cone by a trace-scaled spectral shift, and transformed by a small stack of
manifold layers whose weights stay orthogonal under a polar retraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ColumnMismatch,
    DimMismatch,
    MissingCache,
    NonPositiveEigenvalue,
    RetractionFailure,
    TooFewColumns,
)
from .linalg import EigPair, check_finite, eig_sym, spectral_fn_backward, sym

# Candidate is declared rank-deficient below this singular value.
RETRACT_TOL = 1e-12


# ---------------------------------------------------------------------------
# covariance construction


def covariance(rows: np.ndarray) -> np.ndarray:
    """Sample covariance between the row vectors of an m-by-n matrix.

    Each row is centered by its own mean; normalization is 1/(n-1). The
    result is symmetric positive semi-definite.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DimMismatch(f"expected 2-d row matrix, got shape {rows.shape}")
    n = rows.shape[1]
    if n < 2:
        raise TooFewColumns(f"need at least 2 columns for covariance, got {n}")
    check_finite(rows, "row matrix")
    centered = rows - rows.mean(axis=1, keepdims=True)
    return sym(centered @ centered.T / (n - 1))


def regularize_spd(
    m: np.ndarray, eps: float = 1e-3, abs_floor: float = 1e-8
) -> np.ndarray:
    """Shift a symmetric PSD matrix onto the SPD cone.

    Adds eps * tr(S) to every singular value, where S holds the singular
    values of m; when that multiplicative shift would fall at or below
    abs_floor (degenerate trace), shift by abs_floor instead.

    Implemented through the symmetric eigendecomposition: for a PSD input
    the singular values equal the eigenvalues, and rebuilding from clipped
    eigenvalues keeps the output positive definite even when round-off
    pushed an eigenvalue a hair below zero.
    """
    eig = eig_sym(m)
    trace_s = float(np.sum(np.abs(eig.values)))
    shift = eps * trace_s
    if shift <= abs_floor:
        shift = abs_floor
    lifted = np.maximum(eig.values, 0.0) + shift
    return sym((eig.vectors * lifted) @ eig.vectors.T)


@dataclass(frozen=True)
class CompositeCovariance:
    """Joint covariance of two stacked patch matrices.

    `raw` is the plain sample covariance of the 2N stacked rows; `c` is its
    SPD regularization and is what the network consumes. Quadrant views
    slice `raw`, so the cross blocks are exact transposes of each other.
    """

    n_ir: int
    n_vi: int
    raw: np.ndarray
    c: np.ndarray

    @property
    def dim(self) -> int:
        return self.n_ir + self.n_vi

    @property
    def c_irir(self) -> np.ndarray:
        return self.raw[: self.n_ir, : self.n_ir]

    @property
    def c_irvi(self) -> np.ndarray:
        return self.raw[: self.n_ir, self.n_ir :]

    @property
    def c_viir(self) -> np.ndarray:
        return self.raw[self.n_ir :, : self.n_ir]

    @property
    def c_vivi(self) -> np.ndarray:
        return self.raw[self.n_ir :, self.n_ir :]


def composite_covariance(
    m_ir: np.ndarray, m_vi: np.ndarray, eps: float = 1e-3
) -> CompositeCovariance:
    """Stack two patch matrices row-wise and take the joint covariance.

    Both matrices must share the column count (pixels per patch). The four
    quadrants of the raw covariance are the within- and cross-modal blocks.
    """
    m_ir = np.asarray(m_ir, dtype=np.float64)
    m_vi = np.asarray(m_vi, dtype=np.float64)
    if m_ir.ndim != 2 or m_vi.ndim != 2:
        raise DimMismatch("patch matrices must be 2-d")
    if m_ir.shape[1] != m_vi.shape[1]:
        raise ColumnMismatch(
            f"column counts differ: {m_ir.shape[1]} vs {m_vi.shape[1]}"
        )
    stacked = np.vstack([m_ir, m_vi])
    raw = covariance(stacked)
    # exact transpose symmetry across the off-diagonal quadrants
    n = m_ir.shape[0]
    raw[n:, :n] = raw[:n, n:].T
    c = regularize_spd(raw, eps=eps)
    return CompositeCovariance(n_ir=n, n_vi=m_vi.shape[0], raw=raw, c=c)


# ---------------------------------------------------------------------------
# manifold layers


def bimap_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Congruence transform W X W^T; preserves SPD for orthogonal W."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.shape[1] != x.shape[0] or x.shape[0] != x.shape[1]:
        raise DimMismatch(f"bimap shapes incompatible: W {w.shape}, X {x.shape}")
    return w @ x @ w.T


def bimap_backward(
    x: np.ndarray, w: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of W X W^T: (dL/dX, Euclidean dL/dW).

    With G~ the symmetric part of the upstream gradient:
    dL/dX = W^T G~ W and dL/dW = 2 G~ W X (using X symmetric).
    """
    g_tilde = sym(np.asarray(upstream, dtype=np.float64))
    grad_x = w.T @ g_tilde @ w
    grad_w = 2.0 * g_tilde @ w @ x
    return grad_x, grad_w


def reeig_forward(x: np.ndarray, eps: float) -> np.ndarray:
    """Clamp eigenvalues from below: U max(eps, Sigma) U^T."""
    out, _ = reeig_forward_cached(x, eps)
    return out


def reeig_forward_cached(x: np.ndarray, eps: float) -> tuple[np.ndarray, EigPair]:
    eig = eig_sym(x)
    out = sym((eig.vectors * np.maximum(eig.values, eps)) @ eig.vectors.T)
    return out, eig


def reeig_backward(eig: EigPair, eps: float, upstream: np.ndarray) -> np.ndarray:
    """Backward of the eigenvalue clamp; subgradient 0 at the threshold."""
    return spectral_fn_backward(
        eig,
        g=lambda v: np.maximum(v, eps),
        gprime=lambda v: (v > eps).astype(np.float64),
        upstream=upstream,
    )


def logeig_forward(x: np.ndarray) -> np.ndarray:
    """Matrix logarithm U log(Sigma) U^T; the log-map at the identity."""
    out, _ = logeig_forward_cached(x)
    return out


def logeig_forward_cached(x: np.ndarray) -> tuple[np.ndarray, EigPair]:
    eig = eig_sym(x)
    if eig.values[-1] <= 0.0:
        raise NonPositiveEigenvalue(
            f"matrix logarithm needs positive eigenvalues, min is {eig.values[-1]:.3e}"
        )
    out = sym((eig.vectors * np.log(eig.values)) @ eig.vectors.T)
    return out, eig


def logeig_backward(eig: EigPair, upstream: np.ndarray) -> np.ndarray:
    return spectral_fn_backward(eig, g=np.log, gprime=lambda v: 1.0 / v, upstream=upstream)


def eig_exp(s: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix; inverse of logeig_forward."""
    eig = eig_sym(s)
    return sym((eig.vectors * np.exp(eig.values)) @ eig.vectors.T)


# ---------------------------------------------------------------------------
# Stiefel manifold


@dataclass
class StiefelParam:
    """Square orthogonal weight; the invariant is restored by every step."""

    w: np.ndarray

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def orth_defect(self) -> float:
        d = self.w.shape[1]
        return float(np.linalg.norm(self.w.T @ self.w - np.eye(d)))


def init_stiefel(dim: int, rng: np.random.Generator) -> StiefelParam:
    """Random orthogonal matrix from the QR of a Gaussian draw.

    The R-diagonal sign fix makes the draw unique, so identical seeds give
    identical weights.
    """
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return StiefelParam(w=q * signs)


def stiefel_project(w: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space at W."""
    return grad - w @ sym(w.T @ grad)


def stiefel_retract(candidate: np.ndarray) -> np.ndarray:
    """Polar retraction: nearest orthogonal matrix, U V^T of the SVD."""
    u, s, vt = np.linalg.svd(candidate)
    if s[-1] < RETRACT_TOL:
        raise RetractionFailure(
            f"retraction candidate is rank-deficient (min singular value {s[-1]:.3e})"
        )
    return u @ vt

def stiefel_step(w: StiefelParam, grad_euclidean: np.ndarray, lr: float) -> StiefelParam:
    """One Riemannian SGD step: tangent projection then polar retraction."""
    check_finite(grad_euclidean, "stiefel gradient")
    xi = stiefel_project(w.w, np.asarray(grad_euclidean, dtype=np.float64))
    return StiefelParam(w=stiefel_retract(w.w - lr * xi))


# ---------------------------------------------------------------------------
# the layer stack


@dataclass
class SpdNet:
    """depth x (BiMap, ReEig) followed by one LogEig.

    Forward retains per-layer inputs and eigendecompositions; backward
    consumes them in reverse and returns one Euclidean gradient per weight.
    Instances are not safe for concurrent forward/backward interleaving.
    """

    bimaps: list[StiefelParam]
    reeig_eps: float = 1e-3
    _cache: list | None = field(default=None, repr=False)

    @property
    def depth(self) -> int:
        return len(self.bimaps)

    @property
    def dim(self) -> int:
        return self.bimaps[0].dim

    def forward(self, x0: np.ndarray) -> np.ndarray:
        x = np.asarray(x0, dtype=np.float64)
        cache: list = []
        for param in self.bimaps:
            y = bimap_forward(x, param.w)
            z, eig = reeig_forward_cached(y, self.reeig_eps)
            cache.append((x, eig))
            x = z
        out, eig_log = logeig_forward_cached(x)
        cache.append(eig_log)
        self._cache = cache
        return out

    def backward(self, upstream: np.ndarray) -> list[np.ndarray]:
        """Euclidean gradients for each BiMap weight, front to back."""
        if self._cache is None:
            raise MissingCache("backward called before forward")
        eig_log = self._cache[-1]
        g = logeig_backward(eig_log, upstream)
        grads: list[np.ndarray] = [np.empty(0)] * self.depth
        for k in range(self.depth - 1, -1, -1):
            x_in, eig_reeig = self._cache[k]
            g = reeig_backward(eig_reeig, self.reeig_eps, g)
            g, grad_w = bimap_backward(x_in, self.bimaps[k].w, g)
            grads[k] = grad_w
        return grads


def spdnet_forward(net: SpdNet, x0: np.ndarray) -> np.ndarray:
    return net.forward(x0)


def spdnet_backward(net: SpdNet, upstream: np.ndarray) -> list[np.ndarray]:
    return net.backward(upstream)
