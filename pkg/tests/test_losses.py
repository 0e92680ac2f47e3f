import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duetlab.losses import (
    PitLossConfig,
    SourcePair,
    pit_bce,
    pit_l1_mixture_loss,
    subgradient_pit_l1,
)


def test_config_validation():
    PitLossConfig(0.8, 0.2)
    with pytest.raises(ValueError):
        PitLossConfig(-0.1, 0.2)
    with pytest.raises(ValueError):
        PitLossConfig(0.0, 0.0)


def test_perfect_and_swapped():
    rng = np.random.default_rng(0)
    g1, g2 = rng.normal(size=100), rng.normal(size=100)
    loss, perm = pit_l1_mixture_loss((g1, g2), (g1, g2))
    assert loss == 0.0
    assert perm == (0, 1)
    loss, perm = pit_l1_mixture_loss((g2, g1), (g1, g2))
    assert loss == 0.0
    assert perm == (1, 0)


def test_hand_evaluated_example():
    # both pairings evaluated by hand: permutation term min(0.75, 2.25),
    # mixture term 0.75, total 0.8*0.75 + 0.2*0.75 = 0.75
    g1, g2 = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    e1, e2 = np.array([0.5, 0.0]), np.array([0.0, 1.0])
    loss, perm = pit_l1_mixture_loss((e1, e2), (g1, g2), PitLossConfig(0.8, 0.2))
    assert loss == pytest.approx(0.75, abs=1e-12)
    assert perm == (0, 1)


def test_swap_symmetry_exact():
    rng = np.random.default_rng(1)
    refs = (rng.normal(size=(2, 50)), rng.normal(size=(2, 50)))
    ests = (rng.normal(size=(2, 50)), rng.normal(size=(2, 50)))
    a, _ = pit_l1_mixture_loss(ests, refs)
    b, _ = pit_l1_mixture_loss((ests[1], ests[0]), refs)
    assert a == b


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_zero_iff_perfect_up_to_permutation(seed):
    rng = np.random.default_rng(seed)
    g1, g2 = rng.normal(size=20), rng.normal(size=20)
    for est in [(g1, g2), (g2, g1)]:
        loss, _ = pit_l1_mixture_loss(est, (g1, g2))
        assert loss == 0.0
    noisy = (g1 + rng.normal(scale=0.1, size=20), g2)
    loss, _ = pit_l1_mixture_loss(noisy, (g1, g2))
    assert loss > 0.0


def test_beta_zero_pure_pit_and_alpha_zero_sum_invariance():
    rng = np.random.default_rng(2)
    g1, g2 = rng.normal(size=30), rng.normal(size=30)
    e1, e2 = rng.normal(size=30), rng.normal(size=30)

    pure = PitLossConfig(1.0, 0.0)
    loss, _ = pit_l1_mixture_loss((e1, e2), (g1, g2), pure)
    expect = min(np.mean(np.abs(e1 - g1)) + np.mean(np.abs(e2 - g2)),
                 np.mean(np.abs(e2 - g1)) + np.mean(np.abs(e1 - g2)))
    assert loss == pytest.approx(expect, rel=1e-12)

    mix_only = PitLossConfig(0.0, 1.0)
    shift = rng.normal(size=30)
    a, _ = pit_l1_mixture_loss((e1, e2), (g1, g2), mix_only)
    b, _ = pit_l1_mixture_loss((e1 + shift, e2 - shift), (g1, g2), mix_only)
    assert a == pytest.approx(b, rel=1e-12)


def test_pit_bce_scalar_arithmetic():
    t = (np.array([1.0]), np.array([0.0]))
    p = (np.array([0.9]), np.array([0.1]))
    loss, perm = pit_bce(p, t)
    assert loss == pytest.approx(-2 * math.log(0.9), rel=1e-9)
    assert loss == pytest.approx(0.210721, abs=1e-5)
    assert perm == (0, 1)
    swapped_loss, swapped_perm = pit_bce((p[1], p[0]), t)
    assert swapped_loss == pytest.approx(loss, rel=1e-12)
    assert swapped_perm == (1, 0)


def test_pit_bce_floor_and_validation():
    t = (np.ones((4, 4)), np.zeros((4, 4)))
    loss, perm = pit_bce(t, t)
    assert perm == (0, 1)
    assert 0 < loss < 3e-7  # clamp floor: -log(1 - 1e-7) per source
    with pytest.raises(ValueError, match="binary"):
        pit_bce(t, (np.full((4, 4), 0.5), np.zeros((4, 4))))


def test_subgradient_zero_at_optimum():
    rng = np.random.default_rng(3)
    g = (rng.normal(size=(2, 8)), rng.normal(size=(2, 8)))
    for grad in subgradient_pit_l1(g, g):
        np.testing.assert_array_equal(grad, 0.0)


def _loss_value(flat, refs, config, shape):
    e1 = flat[:flat.size // 2].reshape(shape)
    e2 = flat[flat.size // 2:].reshape(shape)
    loss, _ = pit_l1_mixture_loss((e1, e2), refs, config)
    return loss


def test_subgradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    shape = (3, 5)
    refs = (rng.normal(size=shape), rng.normal(size=shape))
    # keep every residual away from the |.| kink
    e1 = refs[0] + np.where(rng.random(shape) < 0.5, -1.0, 1.0) * rng.uniform(0.2, 1.0, shape)
    e2 = refs[1] + np.where(rng.random(shape) < 0.5, -1.0, 1.0) * rng.uniform(0.2, 1.0, shape)
    config = PitLossConfig(0.8, 0.2)
    g1, g2 = subgradient_pit_l1((e1, e2), refs, config)

    flat = np.concatenate([e1.ravel(), e2.ravel()])
    grad = np.concatenate([g1.ravel(), g2.ravel()])
    h = 1e-6
    for idx in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[idx] += h
        down[idx] -= h
        fd = (_loss_value(up, refs, config, shape) - _loss_value(down, refs, config, shape)) / (2 * h)
        assert fd == pytest.approx(grad[idx], rel=1e-6, abs=1e-12)


def test_subgradient_scale_invariance():
    rng = np.random.default_rng(5)
    refs = (rng.normal(size=16), rng.normal(size=16))
    e1 = refs[0] + rng.uniform(0.1, 0.5, 16)
    e2 = refs[1] - rng.uniform(0.1, 0.5, 16)
    base = subgradient_pit_l1((e1, e2), refs)
    scaled = subgradient_pit_l1((refs[0] + 3 * (e1 - refs[0]),
                                 refs[1] + 3 * (e2 - refs[1])), refs)
    for a, b in zip(base, scaled):
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_shape_mismatch_errors():
    with pytest.raises(ValueError):
        SourcePair(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError, match="mismatch"):
        pit_l1_mixture_loss((np.zeros(3), np.zeros(3)), (np.zeros(4), np.zeros(4)))
