"""duetlab: a laboratory for monotimbral duet source separation.

Library layout:

- audio: buffers, WAV I/O, resampling, segmentation, STFT/ISTFT
- metrics: BSS decomposition metrics (SDR/SIR/SAR), SI-SDR, paired evaluation
- losses: permutation-invariant training objectives
- scores: note events, piano rolls, conditioning-plane geometry
- dataset: manifests, mixing, splits, augmentation, report emission
- analysis: metric behavior under controlled mixing ratios
- toy: plucked-string synthesis, minimal autodiff, a trainable two-branch
  separator and its benchmark harness
- cli: one entry point exposing all of the above as subcommands
"""

from duetlab.audio import AudioBuffer, ComplexGrid, StftConfig
from duetlab.metrics import MetricReport, ProjectionConfig
from duetlab.scores import ConditioningPlanes, NoteEvent, PianoRoll

__all__ = [
    "AudioBuffer",
    "ComplexGrid",
    "StftConfig",
    "MetricReport",
    "ProjectionConfig",
    "ConditioningPlanes",
    "NoteEvent",
    "PianoRoll",
]

__version__ = "0.1.0"
