"""Central finite-difference checks for every autodiff primitive."""

import os

import numpy as np
import pytest

from duetlab.audio import StftConfig
from duetlab.toy import autodiff as ad
from gradcheck import fd_check, leaf, max_fd_error, scalarize


def test_add_sub_mul_scale():
    a, b = leaf((3, 4), 0), leaf((3, 4), 1)
    fd_check(lambda: scalarize(ad.add(a, b)), [a, b])
    fd_check(lambda: scalarize(ad.sub(a, b)), [a, b])
    fd_check(lambda: scalarize(ad.mul(a, b)), [a, b])
    fd_check(lambda: scalarize(ad.scale(a, -1.7)), [a])


def test_relu():
    # inputs kept away from the kink so central differences are valid
    a = ad.parameter(np.where(np.random.default_rng(2).normal(size=(4, 5)) > 0, 1.0, -1.0)
                     * np.random.default_rng(3).uniform(0.1, 1.0, (4, 5)))
    fd_check(lambda: scalarize(ad.relu(a)), [a])
    # pass-through at strictly positive inputs
    pos = ad.parameter(np.random.default_rng(4).uniform(0.5, 1.0, (3,)))
    out = ad.total(ad.relu(pos))
    ad.backward(out)
    np.testing.assert_array_equal(pos.grad, 1.0)


def test_sigmoid():
    a = leaf((4, 3), 5, scale=2.0)
    fd_check(lambda: scalarize(ad.sigmoid(a)), [a])


def test_concat_and_select():
    a, b = leaf((2, 4), 6), leaf((3, 4), 7)
    fd_check(lambda: scalarize(ad.concat([a, b], axis=0)), [a, b])
    c = leaf((3, 2, 5), 8)
    fd_check(lambda: scalarize(ad.select(c, 1)), [c])


def test_concat_backward_splits_exactly():
    a, b = leaf((2, 3), 9), leaf((2, 3), 10)
    out = ad.concat([a, b], axis=0)
    loss = scalarize(out, seed=11)
    ad.backward(loss)
    upstream = out.grad
    np.testing.assert_array_equal(a.grad, upstream[:2])
    np.testing.assert_array_equal(b.grad, upstream[2:])
    assert np.linalg.norm(a.grad) ** 2 + np.linalg.norm(b.grad) ** 2 == pytest.approx(
        np.linalg.norm(upstream) ** 2)


def test_mean_abs():
    # away from the kink
    vals = np.where(np.random.default_rng(12).normal(size=7) > 0, 1.0, -1.0) \
        * np.random.default_rng(13).uniform(0.2, 1.0, 7)
    a = ad.parameter(vals)
    fd_check(lambda: ad.mean_abs(a), [a])


def test_linear():
    x, w, b = leaf((6,), 14), leaf((4, 6), 15), leaf((4,), 16)
    fd_check(lambda: scalarize(ad.linear(x, w, b)), [x, w, b])


def test_conv1d():
    x, w, b = leaf((2, 13), 17), leaf((3, 2, 4), 18), leaf((3,), 19)
    fd_check(lambda: scalarize(ad.conv1d(x, w, b, stride=2, padding=1)), [x, w, b])
    fd_check(lambda: scalarize(ad.conv1d(x, w, b, stride=1, padding=0)), [x, w, b])


def test_conv_transpose1d():
    x, w, b = leaf((3, 6), 20), leaf((3, 2, 4), 21), leaf((2,), 22)
    fd_check(lambda: scalarize(ad.conv_transpose1d(x, w, b, stride=2, padding=1)), [x, w, b])
    fd_check(lambda: scalarize(ad.conv_transpose1d(x, w, b, stride=1, padding=0)), [x, w, b])


def test_conv_transpose_inverts_conv_geometry():
    # encoder/decoder shape contract used by the separator: stride 4, kernel
    # 8, padding 2 maps T -> T/4 -> T
    x = leaf((1, 64), 23)
    w_enc, b_enc = leaf((4, 1, 8), 24), leaf((4,), 25)
    w_dec, b_dec = leaf((4, 1, 8), 26), leaf((1,), 27)
    down = ad.conv1d(x, w_enc, b_enc, stride=4, padding=2)
    assert down.shape == (4, 16)
    up = ad.conv_transpose1d(down, w_dec, b_dec, stride=4, padding=2)
    assert up.shape == (1, 64)


def test_freq_conv():
    x, w, b = leaf((2, 12, 3), 28), leaf((3, 2, 4), 29), leaf((3,), 30)
    fd_check(lambda: scalarize(ad.freq_conv(x, w, b, stride=2, padding=1)), [x, w, b])


def test_freq_conv_transpose():
    x, w, b = leaf((3, 5, 2), 31), leaf((3, 2, 4), 32), leaf((2,), 33)
    fd_check(lambda: scalarize(ad.freq_conv_transpose(x, w, b, stride=2, padding=1)),
             [x, w, b])


def test_masked_istft():
    cfg = StftConfig(window_size=16, hop=4)
    frames, n_samples = 7, 36
    rng = np.random.default_rng(34)
    grid = rng.normal(size=(8, frames)) + 1j * rng.normal(size=(8, frames))
    grid[0] = grid[0].real  # keep DC physical
    mask = ad.parameter(rng.uniform(0.2, 0.8, size=(8, frames)))
    fd_check(lambda: scalarize(ad.masked_istft(mask, grid, cfg, n_samples)), [mask])


def test_masked_istft_matches_istft():
    # forward path agrees with the audio-module inverse on a full-bin mask
    from duetlab.audio import AudioBuffer, istft, stft

    cfg = StftConfig(window_size=16, hop=4)
    rng = np.random.default_rng(35)
    x = rng.normal(size=50)
    grid = stft(AudioBuffer(x, 100), cfg)
    mask = ad.constant(np.ones(grid.values.shape))
    out = ad.masked_istft(mask, grid.values, cfg, 50)
    np.testing.assert_allclose(out.value, istft(grid).mono(), atol=1e-12)


def test_shape_errors_at_construction():
    a, b = ad.parameter(np.zeros((2, 3))), ad.parameter(np.zeros((3, 2)))
    with pytest.raises(ValueError, match="mismatch"):
        ad.add(a, b)
    with pytest.raises(ValueError, match="channels"):
        ad.conv1d(ad.parameter(np.zeros((3, 10))), ad.parameter(np.zeros((2, 2, 4))),
                  ad.parameter(np.zeros(2)))
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.parameter(np.zeros(3)))


def test_backward_accumulates_through_reuse():
    a = leaf((4,), 36)
    out = ad.total(ad.add(a, a))
    ad.backward(out)
    np.testing.assert_array_equal(a.grad, 2.0)


def test_constant_subgraphs_skip_gradients():
    c = ad.constant(np.ones((2, 2)))
    p = leaf((2, 2), 37)
    out = ad.total(ad.mul(c, p))
    ad.backward(out)
    assert c.grad is None
    np.testing.assert_array_equal(p.grad, 1.0)


def test_smooth_primitives_with_fresh_seed():
    # fresh randomness every run guards against seed-tuned gradients; only
    # kink-free ops, so any tolerance breach is a real defect
    seed = int.from_bytes(os.urandom(4), "little")
    rng = np.random.default_rng(seed)
    x = ad.parameter(rng.normal(size=(2, 11)))
    w = ad.parameter(rng.normal(size=(3, 2, 4)))
    b = ad.parameter(rng.normal(size=3))
    err = max_fd_error(lambda: scalarize(ad.sigmoid(ad.conv1d(x, w, b, 2, 1)), seed=1),
                       [x, w, b])
    assert err < 1e-4, f"seed {seed}: rel err {err:.3g}"
