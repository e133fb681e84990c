"""Convolutional decoder: forward against a naive loop convolution, backward
against finite differences, and the adaptive-moment update against hand math.
"""

import numpy as np
import pytest
from scipy.special import expit

from conftest import rel_err
from spdfuse.decoder import (
    CHANNEL_PLAN,
    KSIZE,
    LEAKY_SLOPE,
    AdamState,
    ConvDecoder,
    adam_step,
    init_adam,
    init_decoder,
)
from spdfuse.errors import MissingCache, SizeMismatch


def naive_conv(x: np.ndarray, kern: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 correlation written as six explicit loops."""
    c_out, c_in = kern.shape[0], kern.shape[1]
    h, w = x.shape[1], x.shape[2]
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    z = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for dy in range(KSIZE):
                        for dx in range(KSIZE):
                            acc += kern[o, c, dy, dx] * padded[c, i + dy, j + dx]
                z[o, i, j] = acc
    return z


def small_decoder(rng: np.random.Generator, plan=(2, 3, 1)) -> ConvDecoder:
    kernels = [
        rng.normal(0.0, 0.5, size=(c_out, c_in, KSIZE, KSIZE))
        for c_in, c_out in zip(plan[:-1], plan[1:])
    ]
    biases = [rng.normal(0.0, 0.1, size=c_out) for c_out in plan[1:]]
    return ConvDecoder(kernels=kernels, biases=biases)


def test_zero_decoder_outputs_half():
    kernels = [
        np.zeros((c_out, c_in, KSIZE, KSIZE))
        for c_in, c_out in zip(CHANNEL_PLAN[:-1], CHANNEL_PLAN[1:])
    ]
    biases = [np.zeros(c_out) for c_out in CHANNEL_PLAN[1:]]
    dec = ConvDecoder(kernels=kernels, biases=biases)
    out = dec.forward(np.ones((6, 7)), np.zeros((6, 7)))
    assert np.array_equal(out, np.full((6, 7), 0.5))


def test_forward_matches_naive_convolution(rng):
    dec = small_decoder(rng)
    f_ir = rng.random((5, 6))
    f_vi = rng.random((5, 6))
    got = dec.forward(f_ir, f_vi)

    x = np.stack([f_ir, f_vi])
    z0 = naive_conv(x, dec.kernels[0], dec.biases[0])
    a0 = np.where(z0 > 0, z0, LEAKY_SLOPE * z0)
    z1 = naive_conv(a0, dec.kernels[1], dec.biases[1])
    assert rel_err(got, expit(z1[0])) < 1e-12


def test_forward_output_range_and_shape(rng):
    dec = init_decoder(rng)
    out = dec.forward(rng.random((16, 16)), rng.random((16, 16)))
    assert out.shape == (16, 16)
    assert np.all(out > 0) and np.all(out < 1)


def test_forward_rejects_mismatched_features(rng):
    with pytest.raises(SizeMismatch):
        init_decoder(rng).forward(np.zeros((4, 4)), np.zeros((4, 5)))


def test_backward_requires_forward(rng):
    with pytest.raises(MissingCache):
        init_decoder(rng).backward(np.zeros((4, 4)))


def test_backward_finite_differences(rng):
    dec = small_decoder(rng)
    f_ir = rng.random((5, 4))
    f_vi = rng.random((5, 4))
    a = rng.standard_normal((5, 4))

    out = dec.forward(f_ir, f_vi)
    grads, g_input = dec.backward(a)

    def loss(d: ConvDecoder, fi=f_ir, fv=f_vi) -> float:
        return float(np.sum(a * d.forward(fi, fv)))

    h = 1e-6
    base_params = [p.copy() for p in dec.params()]
    for p_idx, p in enumerate(base_params):
        fd = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            for sign in (h, -h):
                probe = [q.copy() for q in base_params]
                probe[p_idx][idx] += sign
                dec.set_params(probe)
                if sign > 0:
                    plus = loss(dec)
                else:
                    fd[idx] = (plus - loss(dec)) / (2 * h)
        assert rel_err(grads[p_idx], fd) < 1e-5, f"param {p_idx}"
    dec.set_params(base_params)

    fd_ir = np.zeros_like(f_ir)
    fd_vi = np.zeros_like(f_vi)
    it = np.nditer(f_ir, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        for target, fd_arr in ((0, fd_ir), (1, fd_vi)):
            vals = []
            for sign in (h, -h):
                fi, fv = f_ir.copy(), f_vi.copy()
                (fi if target == 0 else fv)[idx] += sign
                vals.append(loss(dec, fi, fv))
            fd_arr[idx] = (vals[0] - vals[1]) / (2 * h)
    dec.forward(f_ir, f_vi)
    _, g_input = dec.backward(a)
    assert rel_err(g_input[0], fd_ir) < 1e-5
    assert rel_err(g_input[1], fd_vi) < 1e-5


def test_init_decoder_deterministic():
    a = init_decoder(np.random.default_rng(11))
    b = init_decoder(np.random.default_rng(11))
    for ka, kb in zip(a.params(), b.params()):
        assert np.array_equal(ka, kb)
    shapes = [k.shape for k in a.kernels]
    assert shapes == [(16, 2, 3, 3), (16, 16, 3, 3), (1, 16, 3, 3)]


def test_adam_first_step_hand_values(rng):
    dec = small_decoder(rng)
    before = [p.copy() for p in dec.params()]
    state = init_adam(dec)
    grads = [np.ones_like(p) for p in before]
    adam_step(dec, grads, state, lr=1e-4)

    # with zero moments and unit gradient: m_hat = 1, v_hat = 1
    expected_delta = 1e-4 / (1.0 + 1e-8)
    for p_new, p_old in zip(dec.params(), before):
        assert np.allclose(p_old - p_new, expected_delta, atol=1e-18)
    assert state.t == 1


def test_adam_state_shapes(rng):
    dec = init_decoder(rng)
    state = init_adam(dec)
    assert isinstance(state, AdamState)
    assert state.t == 0
    for m, p in zip(state.m, dec.params()):
        assert m.shape == p.shape
        assert np.array_equal(m, np.zeros_like(p))
