"""BSS evaluation: projection-based SDR/SIR/SAR, SI-SDR, paired evaluation.

The decomposition projects an estimate onto spans of time-shifted
references (least squares over the zero-padded support, solved through
FFT correlations and a ridge-stabilized block-Toeplitz system):

    s_target = projection onto L shifts of the target reference
    s_target + e_interf = projection onto L shifts of all references
    e_artif = estimate - (s_target + e_interf)

so the three components always sum to the estimate. Energy ratios above
~150 dB collapse to the +inf sentinel: perfect reconstructions leave only
ridge-sized residuals and are reported as infinite rather than as a
meaningless huge number.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len
from scipy.linalg import toeplitz
from scipy.signal import fftconvolve

from duetlab.audio import AudioBuffer

log = logging.getLogger(__name__)

# relative energy ratio beyond which a metric is reported as infinite
_INF_RATIO = 1e-15

CSV_HEADER = "track_id,source,permutation,sdr,si_sdr,sar,sir"

IDENTITY = (0, 1)
SWAP = (1, 0)


class DecompositionError(RuntimeError):
    """Projection system could not be solved (singular beyond ridge repair)."""


@dataclass(frozen=True)
class ProjectionConfig:
    """Distortion-filter length and ridge scale for the decomposition."""

    filter_length: int = 512
    regularization: float = 1e-10

    def __post_init__(self):
        if self.filter_length < 1:
            raise ValueError(f"filter_length must be >= 1, got {self.filter_length}")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")


@dataclass(frozen=True)
class SourceMetrics:
    sdr: float
    si_sdr: float
    sar: float
    sir: float


@dataclass(frozen=True)
class MetricReport:
    """Per-source metrics plus the chosen estimate-to-reference assignment.

    permutation[j] is the estimate index assigned to reference j, and
    per_source[j] holds that pairing's metrics.
    """

    per_source: tuple[SourceMetrics, ...]
    permutation: tuple[int, ...]
    config: ProjectionConfig

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.per_source))):
            raise ValueError(f"permutation {self.permutation} is not a bijection")

    def csv_rows(self, track_id: str) -> list[str]:
        perm = "-".join(str(p) for p in self.permutation)
        rows = []
        for j, m in enumerate(self.per_source):
            rows.append(",".join([
                track_id, f"G{j + 1}", perm,
                format_db(m.sdr), format_db(m.si_sdr),
                format_db(m.sar), format_db(m.sir),
            ]))
        return rows


def format_db(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.4f}"


def _as_mono_array(signal) -> np.ndarray:
    if isinstance(signal, AudioBuffer):
        return signal.mono()
    arr = np.asarray(signal, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {arr.shape}")
    return arr


def _as_channels(signal) -> np.ndarray:
    if isinstance(signal, AudioBuffer):
        return signal.samples
    arr = np.asarray(signal, dtype=np.float64)
    if arr.ndim == 1:
        return arr[np.newaxis, :]
    if arr.ndim == 2:
        return arr
    raise ValueError(f"expected 1-D or 2-D signal, got shape {arr.shape}")


def _ratio_db(num: float, den: float) -> float:
    """10 log10(num/den) with sentinel handling for vanishing energies."""
    if num <= den * _INF_RATIO:
        log.debug("metric numerator vanished (num=%g, den=%g)", num, den)
        return -math.inf
    if den <= num * _INF_RATIO:
        return math.inf
    return 10.0 * math.log10(num / den)


def _correlations(a: np.ndarray, b: np.ndarray, lags: int, nfft: int) -> np.ndarray:
    """c[d] = sum_m a[m] * b[m + d] for d in -(lags-1) .. lags-1."""
    fa = np.fft.rfft(a, nfft)
    fb = np.fft.rfft(b, nfft)
    full = np.fft.irfft(np.conj(fa) * fb, nfft)
    positive = full[:lags]
    negative = full[nfft - lags + 1:][::-1] if lags > 1 else np.empty(0)
    return positive, negative


def _solve_projection(gram: np.ndarray, rhs: np.ndarray, reg: float) -> np.ndarray:
    g = gram.copy()
    trace = np.trace(g)
    if trace > 0 and reg > 0:
        g[np.diag_indices_from(g)] += reg * trace / g.shape[0]
    try:
        coef = np.linalg.solve(g, rhs)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"projection system is singular: {exc}") from None
    if not np.all(np.isfinite(coef)):
        raise DecompositionError("projection solve produced non-finite coefficients")
    return coef


def _decompose_all(estimate: np.ndarray, references: list[np.ndarray],
                   config: ProjectionConfig):
    """Decompositions of one estimate against every target index at once."""
    n = estimate.size
    for ref in references:
        if ref.size != n:
            raise ValueError("estimate and references must share one length")
    nsrc = len(references)
    length = config.filter_length
    nfft = next_fast_len(n + length)

    # block-Toeplitz Gram of all shifted references, and per-reference RHS
    gram = np.empty((nsrc * length, nsrc * length))
    rhs = np.empty(nsrc * length)
    for j in range(nsrc):
        pos_d, _ = _correlations(references[j], estimate, length, nfft)
        rhs[j * length:(j + 1) * length] = pos_d
        for k in range(nsrc):
            pos, neg = _correlations(references[j], references[k], length, nfft)
            first_row = np.concatenate(([pos[0]], neg))
            gram[j * length:(j + 1) * length, k * length:(k + 1) * length] = \
                toeplitz(pos, first_row)

    coef_all = _solve_projection(gram, rhs, config.regularization)
    proj_all = np.zeros(n + length - 1)
    for j in range(nsrc):
        proj_all += fftconvolve(references[j], coef_all[j * length:(j + 1) * length])

    estimate_padded = np.concatenate((estimate, np.zeros(length - 1)))
    e_artif = estimate_padded - proj_all

    results = []
    for j in range(nsrc):
        block = gram[j * length:(j + 1) * length, j * length:(j + 1) * length]
        coef_t = _solve_projection(block, rhs[j * length:(j + 1) * length],
                                   config.regularization)
        s_target = fftconvolve(references[j], coef_t)
        results.append((s_target, proj_all - s_target, e_artif))
    return results


def decompose(estimate, references, target_index: int,
              config: ProjectionConfig = ProjectionConfig()):
    """Split an estimate into target, interference and artifact components.

    All inputs are mono and equal length; outputs have length
    n + filter_length - 1 (the zero-padded projection support) and sum to
    the zero-padded estimate exactly.
    """
    est = _as_mono_array(estimate)
    refs = [_as_mono_array(r) for r in references]
    if not 0 <= target_index < len(refs):
        raise ValueError(f"target_index {target_index} out of range")
    return _decompose_all(est, refs, config)[target_index]


def sdr(decomposition) -> float:
    s_target, e_interf, e_artif = decomposition
    return _ratio_db(float(np.sum(s_target ** 2)),
                     float(np.sum((e_interf + e_artif) ** 2)))


def sir(decomposition) -> float:
    s_target, e_interf, _ = decomposition
    return _ratio_db(float(np.sum(s_target ** 2)), float(np.sum(e_interf ** 2)))


def sar(decomposition) -> float:
    s_target, e_interf, e_artif = decomposition
    return _ratio_db(float(np.sum((s_target + e_interf) ** 2)),
                     float(np.sum(e_artif ** 2)))


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR of an estimate against one reference."""
    est = _as_mono_array(estimate)
    ref = _as_mono_array(reference)
    if est.size != ref.size:
        raise ValueError("estimate and reference must share one length")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference has zero energy")
    beta = float(np.dot(est, ref)) / ref_energy
    target = beta * ref
    residual = est - target
    return _ratio_db(float(np.sum(target ** 2)), float(np.sum(residual ** 2)))


def evaluate_pair(estimates, references,
                  config: ProjectionConfig = ProjectionConfig()) -> MetricReport:
    """Evaluate two estimates against two references, permutation-invariant.

    The assignment maximizing mean SI-SDR wins (ties go to the identity);
    stereo inputs are evaluated per channel and averaged in dB.
    """
    ests = [_as_channels(e) for e in estimates]
    refs = [_as_channels(r) for r in references]
    if len(ests) != 2 or len(refs) != 2:
        raise ValueError("evaluate_pair expects exactly two estimates and two references")
    shape = ests[0].shape
    for sig in ests + refs:
        if sig.shape != shape:
            raise ValueError("all four signals must share one shape")
    channels = shape[0]

    si = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            si[i, j] = np.mean([si_sdr(ests[i][c], refs[j][c]) for c in range(channels)])

    identity_score = (si[0, 0] + si[1, 1]) / 2
    swap_score = (si[1, 0] + si[0, 1]) / 2
    permutation = IDENTITY if identity_score >= swap_score else SWAP

    per_source = []
    for j in range(2):
        est_idx = permutation[j]
        vals = {"sdr": [], "sar": [], "sir": []}
        for c in range(channels):
            dec = _decompose_all(ests[est_idx][c], [refs[0][c], refs[1][c]], config)[j]
            vals["sdr"].append(sdr(dec))
            vals["sar"].append(sar(dec))
            vals["sir"].append(sir(dec))
        per_source.append(SourceMetrics(
            sdr=float(np.mean(vals["sdr"])),
            si_sdr=float(si[est_idx, j]),
            sar=float(np.mean(vals["sar"])),
            sir=float(np.mean(vals["sir"])),
        ))
    return MetricReport(tuple(per_source), permutation, config)
