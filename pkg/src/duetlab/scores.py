"""Note events, piano rolls, and conditioning-plane geometry.

A piano roll is a binary pitch-by-frame activity grid. Activity semantics
are conservative throughout: a frame is active when a note overlaps it by
any positive amount, and every temporal resampling is a max-pool, so an
active pitch can never silently disappear.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from duetlab.audio import StftConfig, stft_frame_count

NOTES_CSV_HEADER = ["source", "pitch", "onset", "offset"]

_ROLL_MAGIC_VERSION = 1
# binary roll header: pitches u32, frames u32, frame rate in millihertz u32,
# source u16, pitch base u16 -> 16 bytes
_ROLL_HEADER = struct.Struct("<IIIHH")


@dataclass(frozen=True)
class NoteEvent:
    """One played note: MIDI pitch, onset/offset seconds, source index."""

    pitch: int
    onset: float
    offset: float
    source: int

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside MIDI range 0-127")
        if self.onset < 0:
            raise ValueError(f"onset must be >= 0, got {self.onset}")
        if self.offset <= self.onset:
            raise ValueError(f"offset {self.offset} must exceed onset {self.onset}")
        if self.source not in (0, 1):
            raise ValueError(f"source must be 0 or 1, got {self.source}")


@dataclass(frozen=True)
class PianoRoll:
    """Binary (pitches, frames) activity grid for one source.

    Row r corresponds to MIDI pitch pitch_base + r, so reduced pitch sets
    keep the same geometry as the full 128-row layout.
    """

    values: np.ndarray
    frame_rate: float
    source: int
    pitch_base: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.uint8)
        if vals.ndim != 2:
            raise ValueError(f"roll values must be 2-D, got ndim={vals.ndim}")
        if not np.all((vals == 0) | (vals == 1)):
            raise ValueError("roll values must be binary")
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        vals = np.ascontiguousarray(vals)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def pitches(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.frame_rate


@dataclass(frozen=True)
class ConditioningPlanes:
    """Activity planes shaped for the two separator injection points.

    temporal: (2 * P, T_t) with source 0 in rows 0..P-1.
    spectral: (2, P, T_f) with source 0 in slab 0.
    """

    temporal: np.ndarray
    spectral: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.temporal, dtype=np.float64)
        z = np.asarray(self.spectral, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] % 2:
            raise ValueError(f"temporal plane must be (2P, T), got {t.shape}")
        if z.ndim != 3 or z.shape[0] != 2:
            raise ValueError(f"spectral plane must be (2, P, T), got {z.shape}")
        if z.shape[1] * 2 != t.shape[0]:
            raise ValueError("temporal and spectral planes disagree on pitch count")
        object.__setattr__(self, "temporal", t)
        object.__setattr__(self, "spectral", z)


def read_notes_csv(path) -> list[NoteEvent]:
    """Parse a source,pitch,onset,offset CSV (header required)."""
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != NOTES_CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(NOTES_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                source, pitch = int(row[0]), int(row[1])
                onset, offset = float(row[2]), float(row[3])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row: {exc}") from None
            try:
                events.append(NoteEvent(pitch, onset, offset, source))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return events


def write_notes_csv(events, path) -> None:
    """Write events with onsets/offsets rounded to microseconds."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(NOTES_CSV_HEADER)
        for ev in events:
            writer.writerow([ev.source, ev.pitch, f"{ev.onset:.6f}", f"{ev.offset:.6f}"])


def rasterize(events, frame_rate: float, duration: float,
              pitch_count: int = 128, pitch_base: int = 0) -> tuple[PianoRoll, PianoRoll]:
    """Rasterize note events into one binary roll per source.

    Frame k covers [k/fps, (k+1)/fps); a pitch is active there iff some
    note overlaps the interval by a positive amount. Events past the
    requested duration are clipped.
    """
    if frame_rate <= 0 or duration <= 0:
        raise ValueError("frame_rate and duration must be positive")
    frames = int(math.ceil(duration * frame_rate - 1e-9))
    grids = np.zeros((2, pitch_count, frames), dtype=np.uint8)
    for ev in events:
        row = ev.pitch - pitch_base
        if not 0 <= row < pitch_count:
            raise ValueError(
                f"pitch {ev.pitch} outside configured range "
                f"[{pitch_base}, {pitch_base + pitch_count})")
        k0 = int(math.floor(ev.onset * frame_rate + 1e-9))
        k1 = int(math.ceil(ev.offset * frame_rate - 1e-9)) - 1
        k0, k1 = max(k0, 0), min(k1, frames - 1)
        if k1 >= k0:
            grids[ev.source, row, k0:k1 + 1] = 1
    return tuple(
        PianoRoll(grids[s], frame_rate, source=s, pitch_base=pitch_base)
        for s in range(2)
    )


def downsample_activity(roll: PianoRoll, factor: int) -> PianoRoll:
    """Max-pool the time axis by an integer factor (trailing group included)."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return roll
    out_frames = math.ceil(roll.frames / factor)
    padded = np.zeros((roll.pitches, out_frames * factor), dtype=np.uint8)
    padded[:, :roll.frames] = roll.values
    pooled = padded.reshape(roll.pitches, out_frames, factor).max(axis=2)
    return PianoRoll(pooled, roll.frame_rate / factor, roll.source, roll.pitch_base)


def _pool_to_columns(roll: PianoRoll, edges_seconds: np.ndarray) -> np.ndarray:
    """Any-overlap max-pool of a roll onto columns bounded by edges_seconds."""
    edges = np.asarray(edges_seconds) * roll.frame_rate
    f0 = np.floor(edges[:-1] + 1e-9).astype(np.int64)
    f1 = np.ceil(edges[1:] - 1e-9).astype(np.int64)  # exclusive
    f0 = np.clip(f0, 0, roll.frames)
    f1 = np.clip(f1, 0, roll.frames)
    prefix = np.zeros((roll.pitches, roll.frames + 1), dtype=np.int64)
    np.cumsum(roll.values, axis=1, out=prefix[:, 1:])
    return (prefix[:, f1] - prefix[:, f0] > 0).astype(np.float64)


def _check_segment_coverage(rolls, segment_samples: int, sample_rate: int) -> None:
    if len(rolls) != 2:
        raise ValueError(f"expected one roll per source, got {len(rolls)}")
    if rolls[0].pitches != rolls[1].pitches:
        raise ValueError("rolls disagree on pitch count")
    seg_seconds = segment_samples / sample_rate
    for roll in rolls:
        if abs(roll.duration - seg_seconds) > 1.0 / roll.frame_rate + 1e-9:
            raise ValueError(
                f"roll spans {roll.duration:.6f} s but the segment spans "
                f"{seg_seconds:.6f} s (mismatch above one frame)")


def align_for_temporal_branch(rolls, segment_samples: int, stage_stride: int,
                              sample_rate: int) -> np.ndarray:
    """Stack both sources' rolls on the waveform-encoder grid at one stage.

    Output shape is (2 * P, ceil(segment_samples / stage_stride)); column j
    covers samples [j * stride, (j+1) * stride) and uses any-overlap
    max-pool semantics. Source 0 occupies rows 0..P-1.
    """
    _check_segment_coverage(rolls, segment_samples, sample_rate)
    n_columns = math.ceil(segment_samples / stage_stride)
    edges = np.arange(n_columns + 1) * (stage_stride / sample_rate)
    planes = [_pool_to_columns(roll, edges) for roll in rolls]
    return np.concatenate(planes, axis=0)


def align_for_spectral_branch(rolls, stft_config: StftConfig, segment_samples: int,
                              sample_rate: int) -> np.ndarray:
    """Stack both sources' rolls on the spectrogram frame grid.

    Output shape is (2, P, T_f) where T_f is the STFT frame count for the
    segment; only the time axis is resampled, the pitch axis is untouched.
    Source 0 occupies slab 0. Columns follow the hop grid; the final column
    absorbs the segment tail so activity there is never dropped.
    """
    _check_segment_coverage(rolls, segment_samples, sample_rate)
    n_columns = stft_frame_count(segment_samples, stft_config)
    edges = np.arange(n_columns + 1) * (stft_config.hop / sample_rate)
    edges[-1] = max(edges[-1], segment_samples / sample_rate)
    planes = [_pool_to_columns(roll, edges) for roll in rolls]
    return np.stack(planes, axis=0)


def roll_segment(roll: PianoRoll, start_seconds: float, duration_seconds: float) -> PianoRoll:
    """Sub-roll covering [start, start + duration); zero-padded past the end."""
    if start_seconds < 0 or duration_seconds <= 0:
        raise ValueError("segment bounds must be non-negative / positive")
    f0 = int(round(start_seconds * roll.frame_rate))
    count = int(round(duration_seconds * roll.frame_rate))
    out = np.zeros((roll.pitches, count), dtype=np.uint8)
    src = roll.values[:, f0:f0 + count]
    out[:, :src.shape[1]] = src
    return PianoRoll(out, roll.frame_rate, roll.source, roll.pitch_base)


def _active_runs(row: np.ndarray):
    """(start, stop) pairs of maximal 1-runs, stop exclusive."""
    padded = np.concatenate(([0], row, [0]))
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    stops = np.flatnonzero(diff == -1)
    return list(zip(starts, stops))


def degrade_labels(roll: PianoRoll, drop_probability: float,
                   onset_jitter_frames: int, seed: int) -> PianoRoll:
    """Simulate imperfect activity labels.

    Each contiguous note run is independently dropped with the given
    probability; survivors are shifted by a uniform integer jitter in
    [-j, j] frames, clipped to the roll bounds. Deterministic per seed.
    """
    if not 0 <= drop_probability <= 1:
        raise ValueError("drop_probability must be in [0, 1]")
    if onset_jitter_frames < 0:
        raise ValueError("onset_jitter_frames must be >= 0")
    rng = np.random.default_rng(seed)
    out = np.zeros_like(roll.values)
    for r in range(roll.pitches):
        for start, stop in _active_runs(roll.values[r]):
            if rng.random() < drop_probability:
                continue
            shift = 0
            if onset_jitter_frames:
                shift = int(rng.integers(-onset_jitter_frames, onset_jitter_frames + 1))
            a = max(0, start + shift)
            b = min(roll.frames, stop + shift)
            if b > a:
                out[r, a:b] = 1
    return PianoRoll(out, roll.frame_rate, roll.source, roll.pitch_base)


def write_roll_binary(roll: PianoRoll, path) -> None:
    """Flat binary roll: 16-byte header then row-major 0/1 bytes."""
    header = _ROLL_HEADER.pack(roll.pitches, roll.frames,
                               int(round(roll.frame_rate * 1000)),
                               roll.source, roll.pitch_base)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(roll.values.tobytes())


def read_roll_binary(path) -> PianoRoll:
    with open(path, "rb") as fh:
        header = fh.read(_ROLL_HEADER.size)
        if len(header) != _ROLL_HEADER.size:
            raise ValueError(f"{path}: truncated roll header")
        pitches, frames, fr_mhz, source, pitch_base = _ROLL_HEADER.unpack(header)
        body = fh.read(pitches * frames)
        if len(body) != pitches * frames:
            raise ValueError(f"{path}: truncated roll body")
    values = np.frombuffer(body, dtype=np.uint8).reshape(pitches, frames)
    return PianoRoll(values, fr_mhz / 1000.0, source, pitch_base)


def roll_to_csv(roll: PianoRoll) -> str:
    """Debug dump: metadata comment line plus one 0/1 row per pitch."""
    lines = [f"# pitches={roll.pitches},frames={roll.frames},"
             f"frame_rate={roll.frame_rate:g},source={roll.source},"
             f"pitch_base={roll.pitch_base}"]
    for r in range(roll.pitches):
        lines.append(",".join(str(int(v)) for v in roll.values[r]))
    return "\n".join(lines) + "\n"
