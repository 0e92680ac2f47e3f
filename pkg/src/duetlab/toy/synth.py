"""Plucked-string duet synthesis with exact note labels.

Karplus-Strong strings (noise burst into a tuned feedback delay line)
stand in for the guitars; an additive partial synth with piano-like
inharmonicity provides a cross-timbre surrogate for metric comparisons.
Everything is seeded and deterministic, and the rasterized rolls are
ground truth by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from duetlab.audio import AudioBuffer
from duetlab.dataset import make_mixture
from duetlab.scores import NoteEvent, PianoRoll, rasterize

TOY_PITCH_BASE = 52
TOY_PITCH_COUNT = 16
TOY_SAMPLE_RATE = 8000
TOY_ROLL_FPS = 100.0

# ring-out past the nominal note offset, seconds
NOTE_RELEASE = 0.08


def midi_to_hz(pitch: float) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


@dataclass(frozen=True)
class TimbreParams:
    """Plucked-string voicing.

    brightness: one-pole lowpass coefficient on the excitation (0 = raw
    noise, toward 1 = darker pluck). damping: loop feedback, strictly
    inside (0, 1). pick_position: comb-filter notch position as a fraction
    of the string length.
    """

    brightness: float = 0.4
    damping: float = 0.985
    pick_position: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.damping < 1.0:
            raise ValueError(f"damping must lie strictly in (0, 1), got {self.damping}")
        if not 0.0 <= self.brightness < 1.0:
            raise ValueError(f"brightness must lie in [0, 1), got {self.brightness}")
        if not 0.0 < self.pick_position < 1.0:
            raise ValueError(f"pick_position must lie in (0, 1), got {self.pick_position}")


@dataclass(frozen=True)
class ToyScore:
    """Duet note list over a reduced contiguous pitch range."""

    events: tuple[NoteEvent, ...]
    duration: float
    pitch_base: int = TOY_PITCH_BASE
    pitch_count: int = TOY_PITCH_COUNT
    density: float = 7.0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for ev in self.events:
            if not self.pitch_base <= ev.pitch < self.pitch_base + self.pitch_count:
                raise ValueError(
                    f"pitch {ev.pitch} outside the configured range "
                    f"[{self.pitch_base}, {self.pitch_base + self.pitch_count})")

    def source_events(self, source: int) -> list[NoteEvent]:
        return [ev for ev in self.events if ev.source == source]


def karplus_strong(pitch: int, duration: float, sample_rate: int,
                   timbre: TimbreParams = TimbreParams(), seed: int = 0,
                   amplitude: float = 1.0) -> AudioBuffer:
    """One plucked note, peak-normalized to 0.5.

    Classic delay-line pluck: a lowpassed noise burst excites a feedback
    loop with two-point averaging; delay length round(fs/f0 - 0.5)
    compensates the averager's half-sample delay.
    """
    f0 = midi_to_hz(pitch)
    if f0 >= sample_rate / 4:
        raise ValueError(f"pitch {pitch} ({f0:.0f} Hz) too high for {sample_rate} Hz")
    delay = int(round(sample_rate / f0 - 0.5))
    n = int(round(duration * sample_rate))
    if n <= 0:
        raise ValueError("duration too short for one sample")

    rng = np.random.default_rng(seed)
    burst = rng.uniform(-1.0, 1.0, size=delay) * amplitude
    if timbre.brightness > 0:
        burst = lfilter([1.0 - timbre.brightness], [1.0, -timbre.brightness], burst)
    pick = max(1, int(round(timbre.pick_position * delay)))
    combed = burst.copy()
    combed[pick:] -= burst[:-pick]

    excitation = np.zeros(n)
    excitation[:min(delay, n)] = combed[:min(delay, n)]
    # y[t] = x[t] + damping * (y[t-delay] + y[t-delay-1]) / 2
    denom = np.zeros(delay + 2)
    denom[0] = 1.0
    denom[delay] = -timbre.damping / 2.0
    denom[delay + 1] = -timbre.damping / 2.0
    out = lfilter([1.0], denom, excitation)

    peak = np.max(np.abs(out))
    if peak > 0:
        out = out * (0.5 / peak)
    return AudioBuffer(out, sample_rate)


def additive_pluck(pitch: int, duration: float, sample_rate: int, seed: int = 0,
                   partials: int = 4, inharmonicity: float = 0.004,
                   decay_seconds: float = 0.6) -> AudioBuffer:
    """Additive decaying partials with stretched (piano-like) overtones.

    A deliberately different timbre family from the delay-line pluck, used
    as the cross-timbre arm of metric comparisons.
    """
    f0 = midi_to_hz(pitch)
    if f0 >= sample_rate / 2 / partials:
        partials = max(1, int(sample_rate / 2 / f0) - 1)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    rng = np.random.default_rng(seed)
    out = np.zeros(n)
    for k in range(1, partials + 1):
        freq = f0 * k * math.sqrt(1.0 + inharmonicity * k * k)
        if freq >= sample_rate / 2:
            break
        phase = rng.uniform(0, 2 * np.pi)
        envelope = np.exp(-t * (k / decay_seconds))
        out += np.sin(2 * np.pi * freq * t + phase) * envelope / (k * k)
    peak = np.max(np.abs(out))
    if peak > 0:
        out = out * (0.5 / peak)
    return AudioBuffer(out, sample_rate)


def random_score(duration: float, seed: int, pitch_base: int = TOY_PITCH_BASE,
                 pitch_count: int = TOY_PITCH_COUNT, density: float = 7.0) -> ToyScore:
    """Seeded duet score with phrase structure, hitting the target rate.

    The lead alternates between the parts phrase by phrase, as duet
    writing tends to: the lead plays densely while the other part rests or
    answers sparsely, so stretches with a single active instrument are
    common. Long-run combined onset rate tracks `density`.
    """
    rng = np.random.default_rng(seed)
    events = []

    def melody(source, start, stop, mean_gap):
        pitch = int(rng.integers(pitch_base, pitch_base + pitch_count))
        t = start + float(rng.uniform(0.0, 0.3 * mean_gap))
        while t < stop - 0.05:
            length = float(rng.uniform(0.12, 0.45))
            events.append(NoteEvent(pitch, round(t, 6), round(min(t + length, stop), 6),
                                    source))
            step = int(rng.integers(-5, 6))
            pitch = int(np.clip(pitch + step, pitch_base, pitch_base + pitch_count - 1))
            t += float(rng.uniform(0.75, 1.25)) * mean_gap

    # lead ~0.8 of the combined rate, the answering part fills half the
    # phrases at a sparser rate; together this lands on `density`
    lead_gap = 1.0 / (0.8 * density)
    answer_gap = 1.0 / (0.4 * density)
    lead = int(rng.integers(0, 2))
    t = 0.0
    while t < duration - 0.05:
        phrase = min(float(rng.uniform(0.8, 1.6)), duration - t)
        melody(lead, t, t + phrase, lead_gap)
        if rng.random() < 0.5:
            melody(1 - lead, t, t + phrase, answer_gap)
        lead = 1 - lead
        t += phrase
    events.sort(key=lambda ev: (ev.onset, ev.source, ev.pitch))
    return ToyScore(tuple(events), duration, pitch_base, pitch_count, density)


STANDARD_COMPARISON_SEED = 21
STANDARD_COMPARISON_SECONDS = 12.0


def standard_comparison_pair(seed: int = STANDARD_COMPARISON_SEED,
                             duration: float = STANDARD_COMPARISON_SECONDS,
                             sample_rate: int = TOY_SAMPLE_RATE):
    """The fixed same-score pair trio used for metric-behavior studies.

    Returns ((x1, x2_same_timbre), (x1, x2_cross_timbre)) where x1 is the
    first string part and both x2 arms render the second part's notes, once
    with the string model and once with the additive surrogate. Both pairs
    are amplitude-normalized.
    """
    from duetlab.analysis import normalize_pair

    score = random_score(duration, seed=seed)
    same = synth_duet(score, sample_rate=sample_rate, seed=seed + 1)
    cross = synth_duet(score, sample_rate=sample_rate, seed=seed + 1,
                       surrogate_second=True)
    x1 = same.stems[0]
    return normalize_pair(x1, same.stems[1]), normalize_pair(x1, cross.stems[1])


@dataclass(frozen=True)
class DuetSample:
    """One synthesized duet: stems, their average mixture, and true rolls."""

    stems: tuple[AudioBuffer, AudioBuffer]
    mixture: AudioBuffer
    rolls: tuple[PianoRoll, PianoRoll]
    score: ToyScore

    @property
    def sample_rate(self) -> int:
        return self.mixture.sample_rate


def _render_stem(events, duration, sample_rate, render_note, seed_base):
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    for idx, ev in enumerate(events):
        note_len = min(ev.offset - ev.onset + NOTE_RELEASE, duration - ev.onset)
        if note_len <= 0:
            continue
        note = render_note(ev.pitch, note_len, seed_base + idx)
        start = int(round(ev.onset * sample_rate))
        chunk = note.mono()[:n - start]
        out[start:start + chunk.size] += chunk
    peak = np.max(np.abs(out))
    if peak > 0.9:
        out *= 0.9 / peak
    return AudioBuffer(out, sample_rate)


def synth_duet(score: ToyScore, timbres: tuple[TimbreParams, TimbreParams] | None = None,
               sample_rate: int = TOY_SAMPLE_RATE, seed: int = 0,
               surrogate_second: bool = False) -> DuetSample:
    """Render a score into stems + mixture + ground-truth rolls.

    With surrogate_second the second part is rendered by the additive
    synth instead of the string model (the cross-timbre condition).
    """
    if timbres is None:
        timbres = (TimbreParams(), TimbreParams())
    stems = []
    for source in range(2):
        events = score.source_events(source)
        timbre = timbres[source]
        if surrogate_second and source == 1:
            def render(pitch, length, note_seed):
                return additive_pluck(pitch, length, sample_rate, seed=note_seed)
        else:
            def render(pitch, length, note_seed, _timbre=timbre):
                return karplus_strong(pitch, length, sample_rate, _timbre, seed=note_seed)
        stems.append(_render_stem(events, score.duration, sample_rate, render,
                                  seed_base=seed * 100003 + source * 1009))
    stems = tuple(stems)
    mixture = make_mixture(*stems)
    rolls = rasterize(score.events, TOY_ROLL_FPS, score.duration,
                      score.pitch_count, score.pitch_base)
    return DuetSample(stems, mixture, rolls, score)
