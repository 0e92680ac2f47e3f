"""Metric behavior under controlled mixing ratios.

Synthetic "imperfect estimates" of a reference x1 are built as
m = alpha * x1 + (1 - alpha) * x2 and scored against x1 across an alpha
grid. Comparing a same-timbre pair against a cross-timbre pair exposes how
much credit the metrics grant to timbrally similar interference.

SDR is reported twice: once through the shift-projection decomposition
(reference set {x1, x2}) and once as the plain energy ratio against x1
(`snr_db`), since either reading of "SDR" is defensible for sweep curves.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from duetlab.audio import AudioBuffer
from duetlab.metrics import ProjectionConfig, _as_mono_array, _ratio_db, decompose, sdr, si_sdr

MONO_LABEL = "monotimbral"
MULTI_LABEL = "multitimbral"

CURVE_CSV_HEADER = "alpha,sdr_db,si_sdr_db,snr_db,pair_label"

DEFAULT_ALPHA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class SweepCurve:
    alphas: tuple[float, ...]
    sdr_db: tuple[float, ...]
    si_sdr_db: tuple[float, ...]
    snr_db: tuple[float, ...]
    label: str

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if any(not 0 < a < 1 for a in alphas):
            raise ValueError("alpha grid must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("alpha grid must be strictly increasing")
        for name in ("sdr_db", "si_sdr_db", "snr_db"):
            if len(getattr(self, name)) != len(alphas):
                raise ValueError(f"{name} length does not match the alpha grid")
        object.__setattr__(self, "alphas", alphas)

    def metric(self, name: str) -> tuple[float, ...]:
        if name not in ("sdr", "si_sdr", "snr"):
            raise ValueError(f"unknown metric {name!r}")
        return getattr(self, f"{name}_db")

    def csv_rows(self) -> list[str]:
        from duetlab.metrics import format_db
        return [
            ",".join([f"{a:.6g}", format_db(s), format_db(si), format_db(sn), self.label])
            for a, s, si, sn in zip(self.alphas, self.sdr_db, self.si_sdr_db, self.snr_db)
        ]


def normalize_pair(x1: AudioBuffer, x2: AudioBuffer) -> tuple[AudioBuffer, AudioBuffer]:
    """Scale each track to unit RMS, then jointly cap the peak at 0.9."""
    out = []
    for buf in (x1, x2):
        rms = float(np.sqrt(np.mean(buf.samples ** 2)))
        if rms == 0.0:
            raise ValueError("cannot normalize a zero-energy track")
        out.append(buf.samples / rms)
    peak = max(float(np.max(np.abs(s))) for s in out)
    if peak > 0.9:
        out = [s * (0.9 / peak) for s in out]
    rate = x1.sample_rate
    return AudioBuffer(out[0], rate), AudioBuffer(out[1], rate)


def alpha_sweep(x1, x2, alpha_grid=None, metric_config: ProjectionConfig = ProjectionConfig(),
                label: str = "", jobs: int = 1) -> SweepCurve:
    """Metric curves over m = alpha*x1 + (1-alpha)*x2, scored against x1."""
    a1 = _as_mono_array(x1)
    a2 = _as_mono_array(x2)
    if a1.size != a2.size:
        raise ValueError("pair must share one length")
    alphas = tuple(DEFAULT_ALPHA_GRID if alpha_grid is None else alpha_grid)

    def point(alpha: float):
        m = alpha * a1 + (1 - alpha) * a2
        dec = decompose(m, [a1, a2], 0, metric_config)
        resid = m - a1
        return (sdr(dec), si_sdr(m, a1),
                _ratio_db(float(np.sum(a1 ** 2)), float(np.sum(resid ** 2))))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(point, alphas))
    else:
        points = [point(a) for a in alphas]
    sdrs, sis, snrs = zip(*points)
    return SweepCurve(alphas, sdrs, sis, snrs, label)


def crossing_alpha(curve: SweepCurve, target_db: float, metric: str = "sdr") -> float:
    """Mixing ratio where the curve reaches target_db (linear interpolation).

    Exact grid hits return the grid point; targets outside the curve range
    raise.
    """
    values = curve.metric(metric)
    for a, v in zip(curve.alphas, values):
        if v == target_db:
            return a
    for (a0, v0), (a1, v1) in zip(zip(curve.alphas, values), zip(curve.alphas[1:], values[1:])):
        if (v0 - target_db) * (v1 - target_db) < 0:
            return a0 + (a1 - a0) * (target_db - v0) / (v1 - v0)
    raise ValueError(f"target {target_db} dB outside the curve range for {metric}")


@dataclass(frozen=True)
class PairComparison:
    mono: SweepCurve
    multi: SweepCurve
    sdr_signs: tuple[int, ...]      # sign(mono - multi) per grid point
    si_sdr_signs: tuple[int, ...]
    consistent_sdr: bool            # mono >= multi everywhere
    consistent_si_sdr: bool

    @property
    def consistent_ordering(self) -> bool:
        return self.consistent_sdr and self.consistent_si_sdr

    def csv(self) -> str:
        lines = [CURVE_CSV_HEADER]
        lines += self.mono.csv_rows()
        lines += self.multi.csv_rows()
        return "\n".join(lines) + "\n"


def compare_pairs(mono_pair, multi_pair, alpha_grid=None,
                  metric_config: ProjectionConfig = ProjectionConfig(),
                  jobs: int = 1) -> PairComparison:
    """Sweep both pairs on one grid and report the per-alpha ordering."""
    mono = alpha_sweep(*mono_pair, alpha_grid, metric_config, MONO_LABEL, jobs)
    multi = alpha_sweep(*multi_pair, alpha_grid, metric_config, MULTI_LABEL, jobs)

    def signs(a, b):
        return tuple(0 if x == y else (1 if x > y else -1) for x, y in zip(a, b))

    sdr_signs = signs(mono.sdr_db, multi.sdr_db)
    si_signs = signs(mono.si_sdr_db, multi.si_sdr_db)
    return PairComparison(
        mono, multi, sdr_signs, si_signs,
        consistent_sdr=all(s >= 0 for s in sdr_signs),
        consistent_si_sdr=all(s >= 0 for s in si_signs),
    )
