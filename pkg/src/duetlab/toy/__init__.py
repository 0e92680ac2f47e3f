"""Desk-scale separation experiment: synthesis, autodiff, model, training."""

from duetlab.toy.synth import TimbreParams, ToyScore, karplus_strong, random_score, synth_duet
from duetlab.toy.separator import SeparatorConfig, init_params, separate
from duetlab.toy.train import (
    BenchmarkSpec,
    TrainConfig,
    evaluate_toy,
    load_checkpoint,
    make_benchmark_duets,
    save_checkpoint,
    train,
)

__all__ = [
    "TimbreParams",
    "ToyScore",
    "karplus_strong",
    "random_score",
    "synth_duet",
    "SeparatorConfig",
    "init_params",
    "separate",
    "BenchmarkSpec",
    "TrainConfig",
    "train",
    "evaluate_toy",
    "make_benchmark_duets",
    "save_checkpoint",
    "load_checkpoint",
]
