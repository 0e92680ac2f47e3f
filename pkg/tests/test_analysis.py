import math

import numpy as np
import pytest

from duetlab.audio import AudioBuffer
from duetlab.analysis import (
    DEFAULT_ALPHA_GRID,
    SweepCurve,
    alpha_sweep,
    compare_pairs,
    crossing_alpha,
    normalize_pair,
)
from duetlab.metrics import ProjectionConfig


def orthonormal_buffers(n=4000, seed=0, sr=8000):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    x1 /= np.linalg.norm(x1)
    x2 -= np.dot(x2, x1) * x1
    x2 /= np.linalg.norm(x2)
    return AudioBuffer(x1, sr), AudioBuffer(x2, sr)


def test_normalize_pair_equal_rms():
    rng = np.random.default_rng(1)
    a = AudioBuffer(rng.normal(size=800) * 0.1, 8000)
    b = AudioBuffer(rng.normal(size=800) * 0.4, 8000)
    na, nb = normalize_pair(a, b)
    rms_a = np.sqrt(np.mean(na.samples ** 2))
    rms_b = np.sqrt(np.mean(nb.samples ** 2))
    assert rms_a / rms_b == pytest.approx(1.0, abs=1e-9)
    peak = max(np.abs(na.samples).max(), np.abs(nb.samples).max())
    assert peak <= 0.9 + 1e-12


def test_normalize_pair_equal_inputs_only_peak_rescale():
    rng = np.random.default_rng(2)
    x = rng.normal(size=500)
    a = AudioBuffer(x, 8000)
    na, nb = normalize_pair(a, AudioBuffer(x.copy(), 8000))
    ratio = na.samples / nb.samples
    np.testing.assert_allclose(ratio, 1.0)


def test_normalize_pair_zero_error():
    with pytest.raises(ValueError, match="zero"):
        normalize_pair(AudioBuffer(np.zeros(10), 8000), AudioBuffer(np.ones(10), 8000))


def test_alpha_sweep_closed_forms():
    x1, x2 = orthonormal_buffers()
    curve = alpha_sweep(x1, x2, metric_config=ProjectionConfig(filter_length=1))
    half = curve.alphas.index(0.5)
    assert curve.si_sdr_db[half] == pytest.approx(0.0, abs=0.1)
    idx = curve.alphas.index(0.8)
    assert curve.si_sdr_db[idx] == pytest.approx(12.0412, abs=1e-4)
    assert curve.si_sdr_db[idx] == pytest.approx(20 * math.log10(0.8 / 0.2), abs=1e-6)


def test_alpha_sweep_monotonic_si_sdr():
    rng = np.random.default_rng(3)
    x1 = AudioBuffer(rng.normal(size=3000) * 0.1, 8000)
    x2 = AudioBuffer(rng.normal(size=3000) * 0.1, 8000)
    n1, n2 = normalize_pair(x1, x2)
    curve = alpha_sweep(n1, n2, metric_config=ProjectionConfig(filter_length=4))
    diffs = np.diff(curve.si_sdr_db)
    assert np.all(diffs > 0)


def test_alpha_sweep_scale_invariance_of_si_sdr():
    x1, x2 = orthonormal_buffers(seed=4)
    cfg = ProjectionConfig(filter_length=2)
    base = alpha_sweep(x1, x2, metric_config=cfg)
    scaled = alpha_sweep(AudioBuffer(5 * x1.samples, 8000),
                         AudioBuffer(5 * x2.samples, 8000), metric_config=cfg)
    np.testing.assert_allclose(scaled.si_sdr_db, base.si_sdr_db, atol=1e-9)


def test_alpha_sweep_jobs_match_serial():
    x1, x2 = orthonormal_buffers(seed=5, n=2000)
    cfg = ProjectionConfig(filter_length=2)
    serial = alpha_sweep(x1, x2, metric_config=cfg)
    parallel = alpha_sweep(x1, x2, metric_config=cfg, jobs=4)
    assert serial.sdr_db == parallel.sdr_db


def test_crossing_alpha_interpolation():
    curve = SweepCurve((0.6, 0.7), (4.0, 6.0), (3.0, 5.0), (2.0, 4.0), "x")
    assert crossing_alpha(curve, 5.0, "sdr") == pytest.approx(0.65)
    assert crossing_alpha(curve, 4.0, "sdr") == 0.6  # exact grid hit
    with pytest.raises(ValueError, match="outside"):
        crossing_alpha(curve, 7.0, "sdr")


def test_crossing_alpha_grid_point_exact():
    x1, x2 = orthonormal_buffers(seed=6)
    curve = alpha_sweep(x1, x2, metric_config=ProjectionConfig(filter_length=1))
    k = 9
    assert crossing_alpha(curve, curve.si_sdr_db[k], "si_sdr") == curve.alphas[k]


def test_sweep_curve_validation():
    with pytest.raises(ValueError, match="increasing"):
        SweepCurve((0.5, 0.4), (0, 0), (0, 0), (0, 0), "x")
    with pytest.raises(ValueError, match="inside"):
        SweepCurve((0.0, 0.5), (0, 0), (0, 0), (0, 0), "x")


def test_compare_pairs_identical_and_antisymmetric():
    x1, x2 = orthonormal_buffers(seed=7, n=2000)
    cfg = ProjectionConfig(filter_length=2)
    grid = (0.2, 0.5, 0.8)
    same = compare_pairs((x1, x2), (x1, x2), grid, cfg)
    assert same.sdr_signs == (0, 0, 0)
    assert same.si_sdr_signs == (0, 0, 0)
    assert same.consistent_ordering

    y2 = AudioBuffer(np.roll(x2.samples, 11), 8000)
    ab = compare_pairs((x1, x2), (x1, y2), grid, cfg)
    ba = compare_pairs((x1, y2), (x1, x2), grid, cfg)
    assert ab.sdr_signs == tuple(-s for s in ba.sdr_signs)
    assert ab.si_sdr_signs == tuple(-s for s in ba.si_sdr_signs)


def test_comparison_csv():
    x1, x2 = orthonormal_buffers(seed=8, n=1000)
    cmp = compare_pairs((x1, x2), (x1, x2), (0.3, 0.6), ProjectionConfig(filter_length=1))
    lines = cmp.csv().strip().split("\n")
    assert lines[0] == "alpha,sdr_db,si_sdr_db,snr_db,pair_label"
    assert len(lines) == 5
    assert lines[1].endswith("monotimbral")
    assert lines[3].endswith("multitimbral")
