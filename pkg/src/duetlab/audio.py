"""Audio containers, WAV I/O, resampling, segmentation and STFT/ISTFT.

Everything downstream (metrics, dataset handling, the toy separator) moves
audio around as :class:`AudioBuffer` values: immutable, channels-first
float64 arrays tagged with a sample rate.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

PCM16_SCALE = 32768.0

# Windowed-sinc resampler geometry: 64 taps per output sample, slight
# rolloff below Nyquist to keep aliasing under the test tolerances.
RESAMPLE_TAPS = 64
RESAMPLE_ROLLOFF = 0.945


class WavFormatError(ValueError):
    """Malformed, truncated, or unsupported WAV data."""


@dataclass(frozen=True)
class AudioBuffer:
    """Multichannel sampled waveform.

    samples: float64 array of shape (channels, n_samples); all channels
    share one length. Values are nominally in [-1, 1] but are not clipped
    until PCM quantization at write time.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got ndim={arr.ndim}")
        if arr.shape[0] < 1:
            raise ValueError("need at least one channel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples contain non-finite values")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def mono(self) -> np.ndarray:
        """The single channel as a 1-D array; raises if multichannel."""
        if self.channels != 1:
            raise ValueError(f"expected mono buffer, got {self.channels} channels")
        return self.samples[0]


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise WavFormatError(f"truncated file while reading {what}")
    return data


def read_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file (PCM-16 or IEEE float-32).

    PCM-16 sample v maps to v / 32768, so the full int16 range lands in
    [-1, 1) and write_wav/read_wav round trips are bit exact.
    """
    with open(path, "rb") as fh:
        riff = fh.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise WavFormatError(f"{path}: not a RIFF/WAVE file")

        fmt = None
        while True:
            header = fh.read(8)
            if len(header) == 0:
                raise WavFormatError(f"{path}: no data chunk")
            if len(header) < 8:
                raise WavFormatError(f"{path}: truncated chunk header")
            chunk_id, size = struct.unpack("<4sI", header)
            if chunk_id == b"fmt ":
                body = _read_exact(fh, size, "fmt chunk")
                if size < 16:
                    raise WavFormatError(f"{path}: fmt chunk too short")
                (audio_format, channels, rate, _byte_rate,
                 _block_align, bits) = struct.unpack("<HHIIHH", body[:16])
                fmt = (audio_format, channels, rate, bits)
            elif chunk_id == b"data":
                if fmt is None:
                    raise WavFormatError(f"{path}: data chunk before fmt chunk")
                raw = fh.read(size)
                if len(raw) < size:
                    raise WavFormatError(f"{path}: truncated data chunk")
                break
            else:
                fh.seek(size + (size & 1), 1)

    audio_format, channels, rate, bits = fmt
    if channels < 1:
        raise WavFormatError(f"{path}: zero channels")
    if audio_format == 1 and bits == 16:
        flat = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM16_SCALE
    elif audio_format == 3 and bits == 32:
        flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits})")

    if flat.size % channels:
        raise WavFormatError(f"{path}: data size not a multiple of the frame size")
    samples = flat.reshape(-1, channels).T
    return AudioBuffer(samples, rate)


def write_wav(buffer: AudioBuffer, path, encoding: str = "pcm16") -> None:
    """Write an AudioBuffer as RIFF/WAVE.

    pcm16 quantization rounds half away from zero and clips at the int16
    range, so +1.0 stores 32767 and -1.0 stores -32768.
    """
    if buffer.n_samples == 0:
        raise ValueError("refusing to write an empty buffer")
    interleaved = buffer.samples.T
    if encoding == "pcm16":
        scaled = interleaved * PCM16_SCALE
        quantized = np.trunc(scaled + np.copysign(0.5, scaled))
        data = np.clip(quantized, -32768, 32767).astype("<i2").tobytes()
        audio_format, bits = 1, 16
    elif encoding == "float32":
        data = np.ascontiguousarray(interleaved, dtype="<f4").tobytes()
        audio_format, bits = 3, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    channels = buffer.channels
    block_align = channels * bits // 8
    byte_rate = buffer.sample_rate * block_align
    fmt_body = struct.pack("<HHIIHH", audio_format, channels,
                           buffer.sample_rate, byte_rate, block_align, bits)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI4s", b"RIFF", 4 + 8 + len(fmt_body) + 8 + len(data), b"WAVE"))
        fh.write(struct.pack("<4sI", b"fmt ", len(fmt_body)))
        fh.write(fmt_body)
        fh.write(struct.pack("<4sI", b"data", len(data)))
        fh.write(data)


def _sinc_kernel(offsets: np.ndarray, cutoff: float) -> np.ndarray:
    """Blackman-windowed sinc taps for fractional offsets, DC-normalized."""
    half = RESAMPLE_TAPS // 2
    kern = 2.0 * cutoff * np.sinc(2.0 * cutoff * offsets)
    t = offsets / half
    window = 0.42 + 0.5 * np.cos(np.pi * t) + 0.08 * np.cos(2.0 * np.pi * t)
    window[np.abs(t) > 1.0] = 0.0
    kern *= window
    kern /= kern.sum(axis=-1, keepdims=True)
    return kern


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited resampling with a fixed 64-tap windowed-sinc kernel.

    Identity when the rates already match. Output length is
    round(n * target_rate / sample_rate).
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buffer.sample_rate:
        return buffer

    n_in = buffer.n_samples
    n_out = int(round(n_in * target_rate / buffer.sample_rate))
    step = buffer.sample_rate / target_rate
    cutoff = 0.5 * min(1.0, target_rate / buffer.sample_rate) * RESAMPLE_ROLLOFF
    half = RESAMPLE_TAPS // 2
    taps = np.arange(-half + 1, half + 1)

    padded = np.pad(buffer.samples, ((0, 0), (half, half + 1)))
    out = np.empty((buffer.channels, n_out))
    # chunked so the (chunk, taps) gather stays small
    for start in range(0, n_out, 65536):
        stop = min(start + 65536, n_out)
        pos = np.arange(start, stop) * step
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        offsets = taps[np.newaxis, :] - frac[:, np.newaxis]
        kern = _sinc_kernel(offsets, cutoff)
        idx = base[:, np.newaxis] + taps[np.newaxis, :] + half
        out[:, start:stop] = np.einsum("ctk,tk->ct", padded[:, idx], kern)
    return AudioBuffer(out, target_rate)


def to_mono(buffer: AudioBuffer) -> AudioBuffer:
    """Average all channels down to one; mono input is returned unchanged."""
    if buffer.channels == 1:
        return buffer
    return AudioBuffer(buffer.samples.mean(axis=0, keepdims=True), buffer.sample_rate)


def segment(buffer: AudioBuffer, length_seconds: float, hop_seconds: float) -> list[AudioBuffer]:
    """Cut fixed-length windows; the trailing partial window is zero-padded.

    Window count is ceil(max(0, n - length) / hop) + 1, so every sample is
    covered and nothing is dropped.
    """
    if length_seconds <= 0 or hop_seconds <= 0:
        raise ValueError("length_seconds and hop_seconds must be positive")
    if buffer.n_samples == 0:
        raise ValueError("cannot segment an empty buffer")
    length = int(round(length_seconds * buffer.sample_rate))
    hop = int(round(hop_seconds * buffer.sample_rate))
    n = buffer.n_samples
    count = math.ceil(max(0, n - length) / hop) + 1
    padded = np.pad(buffer.samples, ((0, 0), (0, max(0, (count - 1) * hop + length - n))))
    return [
        AudioBuffer(padded[:, k * hop:k * hop + length], buffer.sample_rate)
        for k in range(count)
    ]


def _periodic_hann(size: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)


_WINDOWS = {"hann": _periodic_hann}


@dataclass(frozen=True)
class StftConfig:
    """Analysis geometry for stft/istft.

    The window/hop pair must satisfy constant overlap-add; this is checked
    numerically at construction and violations raise immediately.
    """

    window_size: int = 4096
    hop: int = 1024
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.window_size):
            raise ValueError(f"need 0 < hop <= window_size, got hop={self.hop}, "
                             f"window_size={self.window_size}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")
        w = self.window_array()
        folded = np.zeros(self.hop)
        np.add.at(folded, np.arange(self.window_size) % self.hop, w)
        if folded.max() - folded.min() > 1e-9 * folded.mean():
            raise ValueError(
                f"window {self.window!r} with hop {self.hop} violates constant overlap-add")

    def window_array(self) -> np.ndarray:
        return _WINDOWS[self.window](self.window_size)

    @property
    def bins(self) -> int:
        return self.window_size // 2 + 1


def stft_frame_count(n_samples: int, config: StftConfig) -> int:
    """Frames needed to cover n_samples, final frame zero-padded."""
    return math.ceil(max(0, n_samples - config.window_size) / config.hop) + 1


@dataclass(frozen=True)
class ComplexGrid:
    """STFT output: (bins, frames) complex values plus the producing config."""

    values: np.ndarray
    config: StftConfig
    sample_rate: int
    n_samples: int | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.ndim != 2 or vals.shape[0] != self.config.bins:
            raise ValueError(
                f"grid must have {self.config.bins} bin rows, got shape {vals.shape}")
        vals = np.ascontiguousarray(vals)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


def stft(buffer: AudioBuffer, config: StftConfig) -> ComplexGrid:
    """Windowed one-sided STFT of a mono buffer, frame m starting at m*hop."""
    x = buffer.mono()
    w = config.window_array()
    frames = stft_frame_count(x.size, config)
    total = (frames - 1) * config.hop + config.window_size
    padded = np.pad(x, (0, total - x.size))
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, config.window_size)[::config.hop]
    spec = np.fft.rfft(windows * w, axis=1).T
    return ComplexGrid(spec, config, buffer.sample_rate, n_samples=x.size)


def istft(grid: ComplexGrid) -> AudioBuffer:
    """Weighted overlap-add inverse of stft.

    Exact (up to float rounding) wherever the squared-window envelope is
    nonzero; the trailing zero-pad is trimmed when the grid records the
    original sample count.
    """
    config = grid.config
    w = config.window_array()
    frames = np.fft.irfft(grid.values.T, n=config.window_size, axis=1) * w
    total = (grid.frames - 1) * config.hop + config.window_size
    acc = np.zeros(total)
    envelope = np.zeros(total)
    w2 = w * w
    for m in range(grid.frames):
        start = m * config.hop
        acc[start:start + config.window_size] += frames[m]
        envelope[start:start + config.window_size] += w2
    floor = 1e-12 * max(envelope.max(), 1.0)
    out = acc / np.where(envelope > floor, envelope, 1.0)
    if grid.n_samples is not None:
        out = out[:grid.n_samples]
    return AudioBuffer(out[np.newaxis, :], grid.sample_rate)
