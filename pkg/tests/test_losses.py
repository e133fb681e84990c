"""Training objective terms.

Each term gets three kinds of checks: exact zero cases, an independent
value oracle (naive window loops, scipy.ndimage filtering, np.cov), and a
central finite-difference check of the analytic gradient.
"""

import numpy as np
import pytest
from scipy import ndimage

from conftest import fd_scalar, rel_err
from spdfuse.convops import GAUSS5, LAPLACIAN, SOBEL_X, SOBEL_Y
from spdfuse.errors import (
    CorruptFile,
    NonFiniteLoss,
    NumericError,
    SizeMismatch,
    TooSmall,
)
from spdfuse.losses import (
    FixedFilterBank,
    load_features,
    loss_cov,
    loss_cov_from_features,
    loss_grad,
    loss_int,
    loss_ssim,
    make_bank,
    save_features,
    total_loss,
)


def smooth_images(rng, size=16):
    """Band-limited random pair; keeps finite differences off the L1 kinks."""
    f = ndimage.gaussian_filter(rng.random((size, size)), 1.0)
    ir = ndimage.gaussian_filter(rng.random((size, size)), 1.5)
    vi = ndimage.gaussian_filter(rng.random((size, size)), 2.0)
    return np.clip(f, 0.05, 0.95), np.clip(ir, 0.05, 0.95), np.clip(vi, 0.05, 0.95)


# ---------------------------------------------------------------------------
# intensity


def test_loss_int_zero_at_source_maximum(rng):
    ir = rng.random((8, 8))
    vi = rng.random((8, 8))
    value, grad = loss_int(np.maximum(ir, vi), ir, vi)
    assert value == 0.0
    assert np.array_equal(grad, np.zeros((8, 8)))


def test_loss_int_hand_value():
    f = np.full((4, 4), 0.5)
    ir = np.full((4, 4), 0.2)
    vi = np.full((4, 4), 0.4)
    value, grad = loss_int(f, ir, vi)
    assert np.isclose(value, 0.1, atol=1e-15)
    assert np.allclose(grad, 1.0 / 16.0, atol=1e-18)


def test_loss_int_finite_differences(rng):
    f, ir, vi = smooth_images(rng, 8)
    f = f + 0.02  # keep every residual away from zero
    _, grad = loss_int(f, ir, vi)
    fd = fd_scalar(lambda m: loss_int(m, ir, vi)[0], f)
    assert rel_err(grad, fd) < 1e-8


def test_loss_int_rejects_size_mismatch():
    with pytest.raises(SizeMismatch):
        loss_int(np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4)))


# ---------------------------------------------------------------------------
# gradient magnitude


def sobel_mag_oracle(img):
    gx = ndimage.correlate(img, SOBEL_X, mode="mirror")
    gy = ndimage.correlate(img, SOBEL_Y, mode="mirror")
    return np.sqrt(gx * gx + gy * gy)


def test_loss_grad_zero_on_identical_images(rng):
    img = rng.random((12, 12))
    value, grad = loss_grad(img, img, img.copy())
    assert value == 0.0
    assert np.array_equal(grad, np.zeros((12, 12)))


def test_loss_grad_zero_on_constants():
    c = np.full((10, 10), 0.6)
    value, grad = loss_grad(c, np.full((10, 10), 0.2), np.full((10, 10), 0.9))
    assert value == 0.0
    assert np.array_equal(grad, np.zeros((10, 10)))


def test_loss_grad_value_oracle(rng):
    f, ir, vi = smooth_images(rng, 12)
    value, _ = loss_grad(f, ir, vi)
    want = np.abs(
        sobel_mag_oracle(f) - np.maximum(sobel_mag_oracle(ir), sobel_mag_oracle(vi))
    ).mean()
    assert np.isclose(value, want, atol=1e-12)


def test_loss_grad_finite_differences(rng):
    f, ir, vi = smooth_images(rng, 10)
    _, grad = loss_grad(f, ir, vi)
    fd = fd_scalar(lambda m: loss_grad(m, ir, vi)[0], f)
    assert rel_err(grad, fd) < 1e-5


# ---------------------------------------------------------------------------
# structural similarity


def naive_ssim(x, y):
    """Direct per-window computation with an independently built Gaussian."""
    half = 5
    g = np.exp(-((np.arange(11) - half) ** 2) / (2.0 * 1.5**2))
    w = np.outer(g, g)
    w = w / w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            wx = x[i : i + 11, j : j + 11]
            wy = y[i : i + 11, j : j + 11]
            mux = float(np.sum(w * wx))
            muy = float(np.sum(w * wy))
            varx = float(np.sum(w * wx * wx)) - mux**2
            vary = float(np.sum(w * wy * wy)) - muy**2
            cov = float(np.sum(w * wx * wy)) - mux * muy
            vals.append(
                ((2 * mux * muy + c1) * (2 * cov + c2))
                / ((mux**2 + muy**2 + c1) * (varx + vary + c2))
            )
    return float(np.mean(vals))


def test_loss_ssim_zero_on_identical_images(rng):
    img = rng.random((16, 16))
    value, _ = loss_ssim(img, img.copy(), img.copy())
    assert value == 0.0


def test_loss_ssim_value_oracle(rng):
    f, ir, vi = smooth_images(rng, 16)
    value, _ = loss_ssim(f, ir, vi)
    want = (1.0 - naive_ssim(f, vi)) + (1.0 - naive_ssim(f, ir))
    assert np.isclose(value, want, atol=1e-12)


def test_loss_ssim_finite_differences(rng):
    f, ir, vi = smooth_images(rng, 14)
    _, grad = loss_ssim(f, ir, vi)
    fd = fd_scalar(lambda m: loss_ssim(m, ir, vi)[0], f)
    assert rel_err(grad, fd) < 1e-6


def test_loss_ssim_rejects_small_images():
    with pytest.raises(TooSmall):
        loss_ssim(np.zeros((10, 10)), np.zeros((10, 10)), np.zeros((10, 10)))


# ---------------------------------------------------------------------------
# feature-covariance alignment


def features_oracle(img):
    """Independent recomputation of the fixed bank's two-level features."""
    kernels = [SOBEL_X, SOBEL_Y, LAPLACIAN, GAUSS5]
    h2, w2 = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    pooled = img[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
    return [
        np.stack([ndimage.correlate(x, k, mode="mirror") for k in kernels])
        for x in (img, pooled)
    ]


def test_bank_features_match_oracle(rng):
    img = rng.random((12, 14))
    got = make_bank("default").features(img)
    want = features_oracle(img)
    assert len(got) == 2
    for g, w in zip(got, want):
        assert g.shape == w.shape
        assert np.allclose(g, w, atol=1e-12)


def test_bank_backward_is_adjoint(rng):
    bank = make_bank("default")
    img = rng.standard_normal((10, 12))
    feats = bank.features(img)
    up = [rng.standard_normal(f.shape) for f in feats]
    lhs = sum(float(np.sum(f * u)) for f, u in zip(feats, up))
    rhs = float(np.sum(img * bank.backward(img.shape, up)))
    assert abs(lhs - rhs) < 1e-10


def test_make_bank_rejects_unknown_name():
    with pytest.raises(ValueError):
        make_bank("wavelets")


def test_loss_cov_zero_on_identical_images(rng):
    img = rng.random((12, 12))
    value, grad = loss_cov(img, img.copy(), make_bank("default"))
    assert value == 0.0
    assert np.array_equal(grad, np.zeros((12, 12)))


def test_loss_cov_invariant_to_brightness_shift(rng):
    img = rng.random((12, 12))
    value, _ = loss_cov(img, img + 0.3, make_bank("default"))
    assert value < 1e-10


def test_loss_cov_value_oracle(rng):
    f, ir, _ = smooth_images(rng, 12)
    value, _ = loss_cov(f, ir, make_bank("default"))
    want = 0.0
    for lf, lir in zip(features_oracle(f), features_oracle(ir)):
        cf = np.cov(lf.reshape(4, -1))
        cr = np.cov(lir.reshape(4, -1))
        want += np.abs(cf - cr).sum()
    assert np.isclose(value, want, atol=1e-10)


def test_loss_cov_finite_differences(rng):
    f, ir, _ = smooth_images(rng, 10)
    bank = make_bank("default")
    _, grad = loss_cov(f, ir, bank)
    fd = fd_scalar(lambda m: loss_cov(m, ir, bank)[0], f)
    assert rel_err(grad, fd) < 1e-5


def test_loss_cov_from_features_matches(rng):
    f, ir, _ = smooth_images(rng, 12)
    bank = make_bank("default")
    value, _ = loss_cov(f, ir, bank)
    assert value == loss_cov_from_features(bank.features(f), bank.features(ir))


# ---------------------------------------------------------------------------
# combined objective


def test_total_loss_weighted_identity(rng):
    f, ir, vi = smooth_images(rng, 16)
    bank = make_bank("default")
    report, grad = total_loss(f, ir, vi, bank, alpha=1.0, beta=10.0, gamma=20.0)
    assert report.total == report.l_int + report.l_grad + 10.0 * report.l_ssim + 20.0 * report.l_cov

    g_int = loss_int(f, ir, vi)[1]
    g_grad = loss_grad(f, ir, vi)[1]
    g_ssim = loss_ssim(f, ir, vi)[1]
    g_cov = loss_cov(f, ir, bank)[1]
    assert np.array_equal(grad, g_int + g_grad + 10.0 * g_ssim + 20.0 * g_cov)


def test_total_loss_finite_differences(rng):
    f, ir, vi = smooth_images(rng, 14)
    bank = make_bank("default")
    _, grad = total_loss(f, ir, vi, bank)
    fd = fd_scalar(lambda m: total_loss(m, ir, vi, bank)[0].total, f)
    assert rel_err(grad, fd) < 1e-4


def test_total_loss_symmetric_covariance_flag(rng):
    f, ir, vi = smooth_images(rng, 14)
    bank = make_bank("default")
    base, _ = total_loss(f, ir, vi, bank, gamma=20.0)
    both, _ = total_loss(f, ir, vi, bank, gamma=20.0, cov_symmetric=True)
    extra = loss_cov(f, vi, bank)[0]
    assert np.isclose(both.l_cov, base.l_cov + extra, atol=1e-12)
    assert np.isclose(both.total, base.total + 20.0 * extra, atol=1e-10)


def test_total_loss_rejects_nan_input(rng):
    f, ir, vi = smooth_images(rng, 14)
    f = f.copy()
    f[3, 3] = np.nan
    with pytest.raises(NumericError):
        total_loss(f, ir, vi, make_bank("default"))


def test_total_loss_rejects_overflowed_value(rng):
    # finite inputs whose squared window statistics overflow to inf
    f, ir, vi = smooth_images(rng, 14)
    huge = 1e160 * (1.0 + f)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NonFiniteLoss):
        total_loss(huge, ir, vi, make_bank("default"))


def test_total_loss_nonnegative(rng):
    f, ir, vi = smooth_images(rng, 14)
    report, _ = total_loss(f, ir, vi, make_bank("default"))
    for part in (report.l_int, report.l_grad, report.l_cov, report.total):
        assert part >= 0.0


# ---------------------------------------------------------------------------
# precomputed-feature files


def test_feature_file_round_trip(tmp_path, rng):
    feats = make_bank("default").features(rng.random((12, 12)))
    path = tmp_path / "feats.bin"
    save_features(path, feats)
    back = load_features(path)
    assert len(back) == len(feats)
    for a, b in zip(feats, back):
        assert np.array_equal(a, b)


def test_feature_file_rejects_truncation(tmp_path, rng):
    feats = make_bank("default").features(rng.random((8, 8)))
    path = tmp_path / "feats.bin"
    save_features(path, feats)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(CorruptFile):
        load_features(path)


def test_feature_file_rejects_trailing_bytes(tmp_path, rng):
    feats = make_bank("default").features(rng.random((8, 8)))
    path = tmp_path / "feats.bin"
    save_features(path, feats)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CorruptFile):
        load_features(path)
