"""Dual-branch conditional separator at desk scale.

A waveform encoder/decoder (three stride-4 conv stages, mirrored by
transposed convs) runs in parallel with a spectrogram-mask branch (two
frequency conv stages over the mixture STFT magnitude). Activity planes
are concatenated after the last encoder stage of each branch: stacked rows
(2P x T) in the waveform branch, per-source slabs (2 x P x T) in the
spectral branch, mirroring the relative injection depth of the full-scale
design. There are deliberately no skip connections: every decoder path
crosses the conditioned bottleneck, so the activity planes can gate the
entire reconstruction. Per source, the output is the waveform head plus
the masked-ISTFT reconstruction; final layers start at zero so an
untrained model emits half the mixture for each source.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from duetlab.audio import AudioBuffer, StftConfig, stft, stft_frame_count
from duetlab.scores import ConditioningPlanes, align_for_spectral_branch, align_for_temporal_branch
from duetlab.toy import autodiff as ad

CONDITIONING_MODES = ("none", "ground_truth", "degraded")
BRANCH_CHOICES = ("both", "temporal", "spectral")


@dataclass(frozen=True)
class SeparatorConfig:
    sample_rate: int = 8000
    segment_seconds: float = 2.0
    temporal_channels: tuple[int, int, int] = (16, 32, 64)
    temporal_kernel: int = 8
    temporal_stride: int = 4
    temporal_padding: int = 2
    spectral_window: int = 256
    spectral_hop: int = 64
    spectral_channels: tuple[int, int] = (8, 16)
    spectral_kernels: tuple[int, int] = (8, 4)
    spectral_strides: tuple[int, int] = (4, 2)
    spectral_paddings: tuple[int, int] = (2, 1)
    pitch_count: int = 16
    pitch_base: int = 52
    n_sources: int = 2
    conditioning: str = "ground_truth"

    def __post_init__(self):
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.conditioning!r}")
        if self.n_sources != 2:
            raise ValueError("the toy separator is fixed to two sources")
        k, s, p = self.temporal_kernel, self.temporal_stride, self.temporal_padding
        length = self.segment_samples
        for _ in self.temporal_channels:
            if (length + 2 * p - k) % s:
                raise ValueError("temporal stage does not divide the segment exactly")
            length = (length + 2 * p - k) // s + 1
        freq = self.mask_rows
        for kernel, stride, pad in zip(self.spectral_kernels, self.spectral_strides,
                                       self.spectral_paddings):
            if (freq + 2 * pad - kernel) % stride:
                raise ValueError("spectral stage does not divide the bin rows exactly")
            freq = (freq + 2 * pad - kernel) // stride + 1
        if freq != self.pitch_count:
            raise ValueError(
                f"spectral encoder reaches {freq} rows but conditioning has "
                f"{self.pitch_count} pitches; they must match at the injection stage")

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def stft_config(self) -> StftConfig:
        return StftConfig(window_size=self.spectral_window, hop=self.spectral_hop)

    @property
    def mask_rows(self) -> int:
        # Nyquist row is dropped; the mask covers bins 0 .. window/2 - 1
        return self.spectral_window // 2

    @property
    def temporal_total_stride(self) -> int:
        return self.temporal_stride ** len(self.temporal_channels)

    @property
    def temporal_cond_shape(self) -> tuple[int, int]:
        return (2 * self.pitch_count,
                math.ceil(self.segment_samples / self.temporal_total_stride))

    @property
    def spectral_cond_shape(self) -> tuple[int, int, int]:
        return (2, self.pitch_count,
                stft_frame_count(self.segment_samples, self.stft_config))


def init_params(config: SeparatorConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded uniform init scaled by fan-in; output heads start at zero."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def conv_init(name, cout, cin, kernel):
        bound = 1.0 / math.sqrt(cin * kernel)
        params[f"{name}.w"] = rng.uniform(-bound, bound, size=(cout, cin, kernel))
        params[f"{name}.b"] = rng.uniform(-bound, bound, size=cout)

    def tconv_init(name, cin, cout, kernel):
        bound = 1.0 / math.sqrt(cin * kernel)
        params[f"{name}.w"] = rng.uniform(-bound, bound, size=(cin, cout, kernel))
        params[f"{name}.b"] = rng.uniform(-bound, bound, size=cout)

    c1, c2, c3 = config.temporal_channels
    kernel = config.temporal_kernel
    conv_init("tenc1", c1, 1, kernel)
    conv_init("tenc2", c2, c1, kernel)
    conv_init("tenc3", c3, c2, kernel)
    cond_rows = 2 * config.pitch_count
    tconv_init("tdec3", c3 + cond_rows, c2, kernel)
    tconv_init("tdec2", c2, c1, kernel)
    params["tdec1.w"] = np.zeros((c1, config.n_sources, kernel))
    params["tdec1.b"] = np.zeros(config.n_sources)

    z1, z2 = config.spectral_channels
    k1, k2 = config.spectral_kernels
    conv_init("zenc1", z1, 1, k1)
    conv_init("zenc2", z2, z1, k2)
    tconv_init("zdec2", z2 + 2, z1, k2)
    params["zdec1.w"] = np.zeros((z1, config.n_sources, k1))
    params["zdec1.b"] = np.zeros(config.n_sources)
    return params


def conditioning_planes(rolls, config: SeparatorConfig) -> ConditioningPlanes:
    """Both injection planes for one segment's pair of rolls."""
    temporal = align_for_temporal_branch(rolls, config.segment_samples,
                                         config.temporal_total_stride, config.sample_rate)
    spectral = align_for_spectral_branch(rolls, config.stft_config,
                                         config.segment_samples, config.sample_rate)
    return ConditioningPlanes(temporal, spectral)


def zero_conditioning(config: SeparatorConfig) -> ConditioningPlanes:
    return ConditioningPlanes(np.zeros(config.temporal_cond_shape),
                              np.zeros(config.spectral_cond_shape))


def _check_conditioning(cond: ConditioningPlanes, config: SeparatorConfig) -> None:
    if cond.temporal.shape != config.temporal_cond_shape:
        raise ValueError(f"temporal conditioning shape {cond.temporal.shape} != "
                         f"{config.temporal_cond_shape}")
    if cond.spectral.shape != config.spectral_cond_shape:
        raise ValueError(f"spectral conditioning shape {cond.spectral.shape} != "
                         f"{config.spectral_cond_shape}")


def forward(params: dict[str, "ad.Tensor"], mixture: np.ndarray,
            conditioning: ConditioningPlanes | None,
            config: SeparatorConfig) -> list["ad.Tensor"]:
    """Autodiff graph from a mixture segment to per-source waveforms."""
    mixture = np.asarray(mixture, dtype=np.float64)
    if mixture.shape != (config.segment_samples,):
        raise ValueError(f"segment must have shape ({config.segment_samples},), "
                         f"got {mixture.shape}")
    if conditioning is None:
        conditioning = zero_conditioning(config)
    _check_conditioning(conditioning, config)

    stride, pad = config.temporal_stride, config.temporal_padding

    # plain mirrored encoder/decoder: every decoder path passes through the
    # conditioned bottleneck, so the activity planes can modulate all of it
    x = ad.constant(mixture[np.newaxis, :])
    e1 = ad.relu(ad.conv1d(x, params["tenc1.w"], params["tenc1.b"], stride, pad))
    e2 = ad.relu(ad.conv1d(e1, params["tenc2.w"], params["tenc2.b"], stride, pad))
    e3 = ad.relu(ad.conv1d(e2, params["tenc3.w"], params["tenc3.b"], stride, pad))
    bottleneck = ad.concat([e3, ad.constant(conditioning.temporal)], axis=0)
    d3 = ad.relu(ad.conv_transpose1d(bottleneck, params["tdec3.w"], params["tdec3.b"],
                                     stride, pad))
    d2 = ad.relu(ad.conv_transpose1d(d3, params["tdec2.w"], params["tdec2.b"], stride, pad))
    waves = ad.conv_transpose1d(d2, params["tdec1.w"], params["tdec1.b"], stride, pad)

    grid = stft(AudioBuffer(mixture, config.sample_rate), config.stft_config)
    z_const = grid.values[:config.mask_rows]
    magnitude = np.abs(z_const) * (4.0 / config.spectral_window)
    s1, s2 = config.spectral_strides
    p1, p2 = config.spectral_paddings
    z = ad.constant(magnitude[np.newaxis, :, :])
    z1 = ad.relu(ad.freq_conv(z, params["zenc1.w"], params["zenc1.b"], s1, p1))
    z2 = ad.relu(ad.freq_conv(z1, params["zenc2.w"], params["zenc2.b"], s2, p2))
    zc = ad.concat([z2, ad.constant(conditioning.spectral)], axis=0)
    zd2 = ad.relu(ad.freq_conv_transpose(zc, params["zdec2.w"], params["zdec2.b"], s2, p2))
    logits = ad.freq_conv_transpose(zd2, params["zdec1.w"], params["zdec1.b"], s1, p1)
    masks = ad.sigmoid(logits)

    outputs = []
    for source in range(config.n_sources):
        spectral_wave = ad.masked_istft(ad.select(masks, source), z_const,
                                        config.stft_config, config.segment_samples)
        outputs.append(ad.add(ad.select(waves, source), spectral_wave))
    return outputs


def as_tensors(params: dict[str, np.ndarray], trainable: bool = True) -> dict[str, "ad.Tensor"]:
    make = ad.parameter if trainable else ad.constant
    return {name: make(value) for name, value in params.items()}


def separate(params: dict[str, np.ndarray], mixture: np.ndarray,
             conditioning: ConditioningPlanes | None,
             config: SeparatorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Plain-array inference wrapper around forward()."""
    outs = forward(as_tensors(params, trainable=False), mixture, conditioning, config)
    return tuple(out.value for out in outs)
