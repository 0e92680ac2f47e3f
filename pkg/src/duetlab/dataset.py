"""Manifests, mixture construction, splits, augmentation, report emission.

Directory convention for a track: `<track_id>/guitar1.wav, guitar2.wav,
mix.wav, notes.csv`. Manifests are JSON files carrying paths relative to
the manifest's own directory so datasets stay relocatable.

Stored mixtures are stem *averages*; the training loss compares stem
*sums*, so harnesses must derive the consistency target from the stems
rather than reuse mix.wav (the two differ by a factor of 2).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from duetlab.audio import AudioBuffer
from duetlab.metrics import MetricReport, format_db

STEM_FILENAMES = ("guitar1.wav", "guitar2.wav")
MIXTURE_FILENAME = "mix.wav"
NOTES_FILENAME = "notes.csv"

SUBSET_TAGS = ("real", "synthetic", "external")
SPLIT_NAMES = ("train", "val", "test")

REPORT_HEADER = "training_combo,source,permutation,sdr,si_sdr,sar,sir"


@dataclass(frozen=True)
class TrackEntry:
    track_id: str
    stem_paths: tuple[str, str]
    duration: float
    mixture_path: str | None = None
    notes_path: str | None = None
    subset_tag: str = "synthetic"

    def __post_init__(self):
        if len(self.stem_paths) != 2:
            raise ValueError(f"{self.track_id}: exactly two stems required")
        object.__setattr__(self, "stem_paths", tuple(self.stem_paths))
        if self.duration <= 0:
            raise ValueError(f"{self.track_id}: duration must be positive")
        if self.subset_tag not in SUBSET_TAGS:
            raise ValueError(f"{self.track_id}: unknown subset_tag {self.subset_tag!r}")


@dataclass(frozen=True)
class Manifest:
    entries: tuple[TrackEntry, ...]
    sample_rate: int
    split_assignments: dict[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.track_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("track_ids are not unique")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.split_assignments is not None:
            assigned = set(self.split_assignments)
            if assigned != set(ids):
                raise ValueError("split assignments must cover every entry exactly once")
            for name in self.split_assignments.values():
                if name not in SPLIT_NAMES:
                    raise ValueError(f"unknown split name {name!r}")

    def subset(self, split_name: str) -> list[TrackEntry]:
        if self.split_assignments is None:
            raise ValueError("manifest has no split assignments")
        return [e for e in self.entries
                if self.split_assignments[e.track_id] == split_name]

    def to_json(self) -> str:
        doc = {
            "sample_rate": self.sample_rate,
            "entries": [
                {
                    "track_id": e.track_id,
                    "stem_paths": list(e.stem_paths),
                    "mixture_path": e.mixture_path,
                    "notes_path": e.notes_path,
                    "subset_tag": e.subset_tag,
                    "duration": e.duration,
                }
                for e in self.entries
            ],
        }
        if self.split_assignments is not None:
            doc["split_assignments"] = dict(sorted(self.split_assignments.items()))
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path) as fh:
            doc = json.load(fh)
        entries = [
            TrackEntry(
                track_id=item["track_id"],
                stem_paths=tuple(item["stem_paths"]),
                mixture_path=item.get("mixture_path"),
                notes_path=item.get("notes_path"),
                subset_tag=item.get("subset_tag", "synthetic"),
                duration=item["duration"],
            )
            for item in doc["entries"]
        ]
        return cls(tuple(entries), doc["sample_rate"], doc.get("split_assignments"))


def resolve_path(manifest_path, relative: str) -> Path:
    return Path(manifest_path).parent / relative


@dataclass(frozen=True)
class AugmentConfig:
    channel_swap_probability: float = 0.5
    amplitude_scale_range: tuple[float, float] = (0.7, 1.3)
    remix_probability: float = 0.2
    crop_seconds: float = 4.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.amplitude_scale_range
        if not (0 < lo <= hi):
            raise ValueError("amplitude_scale_range must satisfy 0 < lo <= hi")
        for p in (self.channel_swap_probability, self.remix_probability):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.crop_seconds <= 0:
            raise ValueError("crop_seconds must be positive")
        object.__setattr__(self, "amplitude_scale_range", (float(lo), float(hi)))


def make_mixture(stem_a: AudioBuffer, stem_b: AudioBuffer) -> AudioBuffer:
    """Average two stems; the shorter one is zero-padded to the longer."""
    if stem_a.sample_rate != stem_b.sample_rate:
        raise ValueError(f"sample-rate mismatch: {stem_a.sample_rate} vs {stem_b.sample_rate}")
    if stem_a.channels != stem_b.channels:
        raise ValueError(f"channel mismatch: {stem_a.channels} vs {stem_b.channels}")
    n = max(stem_a.n_samples, stem_b.n_samples)
    a = np.pad(stem_a.samples, ((0, 0), (0, n - stem_a.n_samples)))
    b = np.pad(stem_b.samples, ((0, 0), (0, n - stem_b.n_samples)))
    return AudioBuffer((a + b) / 2.0, stem_a.sample_rate)


def split(manifest: Manifest, ratio: float = 0.8, seed: int = 0) -> Manifest:
    """Deterministic track-granularity train/val split.

    Entries already assigned to the test split keep that assignment; the
    rest are shuffled by the seed and divided at round(ratio * n).
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    previous = manifest.split_assignments or {}
    pool = [e.track_id for e in manifest.entries if previous.get(e.track_id) != "test"]
    if len(pool) < 2:
        raise ValueError("need at least two non-test entries to split")
    rng = np.random.default_rng(seed)
    order = [pool[i] for i in rng.permutation(len(pool))]
    n_train = min(max(int(round(ratio * len(pool))), 1), len(pool) - 1)
    assignments = {tid: "test" for tid, name in previous.items() if name == "test"}
    assignments.update({tid: "train" for tid in order[:n_train]})
    assignments.update({tid: "val" for tid in order[n_train:]})
    return replace(manifest, split_assignments=assignments)


def augment_rng(seed: int, track_id: str, epoch: int) -> np.random.Generator:
    """Worker-independent RNG stream derived from (seed, track, epoch)."""
    digest = hashlib.sha256(track_id.encode()).digest()
    track_key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, track_key, epoch]))


def _crop(buffer: AudioBuffer, start: int, length: int) -> AudioBuffer:
    padded = buffer.samples
    if padded.shape[1] < start + length:
        padded = np.pad(padded, ((0, 0), (0, start + length - padded.shape[1])))
    return AudioBuffer(padded[:, start:start + length], buffer.sample_rate)


def augment(stem_pair, other_tracks_pool, config: AugmentConfig,
            rng: np.random.Generator) -> tuple[AudioBuffer, AudioBuffer]:
    """One augmentation pass over a stem pair.

    Fixed order: remix (second stem swapped for another track's second
    stem), common-offset crop (independent offsets when remixed), per-stem
    gain, per-stem channel swap. The caller regenerates the mixture with
    make_mixture afterwards.
    """
    first, second = stem_pair
    sr = first.sample_rate
    crop_len = int(round(config.crop_seconds * sr))

    remixed = rng.random() < config.remix_probability
    if remixed:
        if not other_tracks_pool:
            raise ValueError("remix selected but the track pool is empty")
        pick = int(rng.integers(0, len(other_tracks_pool)))
        second = other_tracks_pool[pick][1]
        if second.sample_rate != sr:
            raise ValueError("pool stem sample rate differs from the input pair")

    def offset_for(buf):
        span = max(buf.n_samples - crop_len, 0)
        return int(rng.integers(0, span + 1))

    if remixed:
        first = _crop(first, offset_for(first), crop_len)
        second = _crop(second, offset_for(second), crop_len)
    else:
        offset = offset_for(first)
        first = _crop(first, offset, crop_len)
        second = _crop(second, offset, crop_len)

    gains = [float(rng.uniform(*config.amplitude_scale_range)) for _ in range(2)]
    first = AudioBuffer(first.samples * gains[0], sr)
    second = AudioBuffer(second.samples * gains[1], sr)

    swaps = [bool(rng.random() < config.channel_swap_probability) for _ in range(2)]
    if swaps[0]:
        first = AudioBuffer(first.samples[::-1], sr)
    if swaps[1]:
        second = AudioBuffer(second.samples[::-1], sr)
    return first, second


def emit_report(rows) -> str:
    """CSV table of (training_combo, MetricReport) pairs, one line per source."""
    lines = [REPORT_HEADER]
    for combo, report in rows:
        perm = "-".join(str(p) for p in report.permutation)
        for j, m in enumerate(report.per_source):
            lines.append(",".join([
                combo, f"G{j + 1}", perm,
                format_db(m.sdr), format_db(m.si_sdr),
                format_db(m.sar), format_db(m.sir),
            ]))
    return "\n".join(lines) + "\n"


def scan_tracks(root, sample_rate: int, subset_tag: str = "synthetic") -> Manifest:
    """Build a manifest from the `<track_id>/guitar1.wav ...` layout."""
    from duetlab.audio import read_wav

    root = Path(root)
    entries = []
    for track_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        stems = [track_dir / name for name in STEM_FILENAMES]
        if not all(p.exists() for p in stems):
            continue
        first = read_wav(stems[0])
        mixture = track_dir / MIXTURE_FILENAME
        notes = track_dir / NOTES_FILENAME
        entries.append(TrackEntry(
            track_id=track_dir.name,
            stem_paths=tuple(str(p.relative_to(root)) for p in stems),
            mixture_path=str(mixture.relative_to(root)) if mixture.exists() else None,
            notes_path=str(notes.relative_to(root)) if notes.exists() else None,
            subset_tag=subset_tag,
            duration=first.duration,
        ))
    return Manifest(tuple(entries), sample_rate)
