"""Permutation-invariant training objectives for two-source separation.

The waveform loss combines a permutation-invariant L1 term between
estimates and references with a mixture-consistency term comparing the sum
of the estimates against the sum of the references. Per-source reduction
is the mean over all elements of that source, then terms are summed over
sources, so the weights stay independent of segment length.

Note: dataset mixtures are stored as stem *averages* while the consistency
term compares stem *sums*; the two differ by a factor of 2, so training
code must pass stem sums (not the stored mixture) as the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BCE_CLAMP = 1e-7

IDENTITY = (0, 1)
SWAP = (1, 0)


@dataclass(frozen=True)
class PitLossConfig:
    alpha_weight: float = 0.8
    beta_weight: float = 0.2

    def __post_init__(self):
        if self.alpha_weight < 0 or self.beta_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha_weight + self.beta_weight <= 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class SourcePair:
    """Two equally shaped signal planes (one per source)."""

    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.first, dtype=np.float64)
        b = np.asarray(self.second, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"source planes differ in shape: {a.shape} vs {b.shape}")
        object.__setattr__(self, "first", a)
        object.__setattr__(self, "second", b)

    def __iter__(self):
        return iter((self.first, self.second))


def _as_pair(value) -> SourcePair:
    if isinstance(value, SourcePair):
        return value
    first, second = value
    return SourcePair(first, second)


def _mae(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(a - b)))


def pit_l1_mixture_loss(estimates, references,
                        config: PitLossConfig = PitLossConfig()):
    """Permutation-invariant L1 plus mixture-consistency loss.

    Returns (loss, permutation) where permutation maps reference index to
    the estimate assigned to it; ties break to the identity.
    """
    est = _as_pair(estimates)
    ref = _as_pair(references)
    if est.first.shape != ref.first.shape:
        raise ValueError(f"estimate/reference shape mismatch: "
                         f"{est.first.shape} vs {ref.first.shape}")
    direct = _mae(est.first, ref.first) + _mae(est.second, ref.second)
    crossed = _mae(est.second, ref.first) + _mae(est.first, ref.second)
    permutation = IDENTITY if direct <= crossed else SWAP
    mixture_term = _mae(est.first + est.second, ref.first + ref.second)
    loss = config.alpha_weight * min(direct, crossed) + config.beta_weight * mixture_term
    return loss, permutation


def pit_bce(predicted_rolls, target_rolls):
    """Permutation-invariant binary cross-entropy over activity planes.

    Predictions are clamped to [1e-7, 1 - 1e-7]; targets must be binary.
    Returns (loss, permutation) with the same conventions as the waveform
    loss: per-source mean, summed over sources, minimized over pairings.
    """
    pred = _as_pair(predicted_rolls)
    target = _as_pair(target_rolls)
    if pred.first.shape != target.first.shape:
        raise ValueError(f"prediction/target shape mismatch: "
                         f"{pred.first.shape} vs {target.first.shape}")
    for t in target:
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("targets must be binary")

    def bce(p, t):
        p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
        return float(np.mean(-t * np.log(p) - (1 - t) * np.log1p(-p)))

    direct = bce(pred.first, target.first) + bce(pred.second, target.second)
    crossed = bce(pred.second, target.first) + bce(pred.first, target.second)
    if direct <= crossed:
        return direct, IDENTITY
    return crossed, SWAP


def subgradient_pit_l1(estimates, references,
                       config: PitLossConfig = PitLossConfig()):
    """Subgradient of the waveform loss w.r.t. both estimates.

    The permutation is frozen at the loss minimizer; d|x|/dx follows the
    sign convention with 0 at 0. Returns (grad_first, grad_second).
    """
    est = _as_pair(estimates)
    ref = _as_pair(references)
    _, permutation = pit_l1_mixture_loss(est, ref, config)
    refs = (ref.first, ref.second)
    # permutation[j] is the estimate index paired with reference j; invert
    # to find the reference each estimate compares against
    assigned = [None, None]
    for ref_idx, est_idx in enumerate(permutation):
        assigned[est_idx] = refs[ref_idx]

    n = est.first.size
    mix_sign = np.sign((est.first + est.second) - (ref.first + ref.second))
    grads = tuple(
        config.alpha_weight * np.sign(e - r) / n + config.beta_weight * mix_sign / n
        for e, r in zip((est.first, est.second), assigned)
    )
    return grads
