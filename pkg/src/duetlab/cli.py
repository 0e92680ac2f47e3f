"""Command-line entry point.

Every workflow is a subcommand; machine-readable CSV/JSON goes to stdout,
human logs to stderr. Exit codes: 0 success, 1 runtime failure (with one
machine-parsable `error: <Type>: <message>` line on stderr), 2 usage
errors. Any flag can be preset through the environment as
DUETLAB_<FLAG-NAME> (dashes to underscores, upper case). Runs that write
an output directory also write run_config.json there, echoing the resolved
arguments including the seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

ENV_PREFIX = "DUETLAB_"


def _env_default(flag: str):
    return os.environ.get(ENV_PREFIX + flag.lstrip("-").replace("-", "_").upper())


class _Parser(argparse.ArgumentParser):
    """argparse with environment-variable defaults per flag."""

    def add_argument(self, *names, **kwargs):  # noqa: A003
        for name in names:
            if name.startswith("--"):
                override = _env_default(name)
                if override is not None:
                    kwargs.pop("required", None)
                    if kwargs.get("nargs") in ("+", "*"):
                        kwargs["default"] = override.split()
                    elif kwargs.get("action") == "store_true":
                        kwargs["default"] = override.lower() in ("1", "true", "yes")
                    else:
                        kwargs["default"] = override
                break
        return super().add_argument(*names, **kwargs)


def _write_run_config(out_dir: Path, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {key: value for key, value in sorted(vars(args).items())
           if key != "func" and not key.startswith("_")}
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_stem_pair(paths):
    from duetlab.audio import read_wav

    return tuple(read_wav(p) for p in paths)


def cmd_manifest(args) -> int:
    from duetlab import dataset

    manifest = dataset.scan_tracks(args.root, int(args.sample_rate), args.subset_tag)
    if args.split is not None:
        if args.seed is None:
            raise ValueError("--split requires --seed (randomized subcommand)")
        manifest = dataset.split(manifest, float(args.split), int(args.seed))
    if args.out:
        manifest.save(args.out)
        print(json.dumps({"entries": len(manifest.entries), "path": str(args.out)}))
    else:
        print(manifest.to_json(), end="")
    return 0


def cmd_mix(args) -> int:
    from duetlab.audio import write_wav
    from duetlab.dataset import make_mixture

    stems = _load_stem_pair(args.stems)
    mixture = make_mixture(*stems)
    write_wav(mixture, args.out, args.encoding)
    print(json.dumps({"out": str(args.out), "samples": mixture.n_samples,
                      "sample_rate": mixture.sample_rate}))
    return 0


def cmd_augment(args) -> int:
    from duetlab.audio import write_wav
    from duetlab.dataset import AugmentConfig, augment, make_mixture

    stems = _load_stem_pair(args.stems)
    pool = []
    if args.pool_stems:
        if len(args.pool_stems) % 2:
            raise ValueError("--pool-stems expects pairs of paths")
        for i in range(0, len(args.pool_stems), 2):
            pool.append(_load_stem_pair(args.pool_stems[i:i + 2]))
    config = AugmentConfig(
        channel_swap_probability=float(args.swap_probability),
        amplitude_scale_range=(float(args.gain_low), float(args.gain_high)),
        remix_probability=float(args.remix_probability),
        crop_seconds=float(args.crop_seconds),
        seed=int(args.seed),
    )
    rng = np.random.default_rng(int(args.seed))
    out_pair = augment(stems, pool, config, rng)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(out_pair[0], out_dir / "guitar1.wav")
    write_wav(out_pair[1], out_dir / "guitar2.wav")
    write_wav(make_mixture(*out_pair), out_dir / "mix.wav")
    _write_run_config(out_dir, args)
    print(json.dumps({"out_dir": str(out_dir)}))
    return 0


def cmd_rasterize(args) -> int:
    from duetlab.scores import rasterize, read_notes_csv, roll_to_csv, write_roll_binary

    events = read_notes_csv(args.notes)
    rolls = rasterize(events, float(args.fps), float(args.duration),
                      int(args.pitch_count), int(args.pitch_base))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for roll in rolls:
        write_roll_binary(roll, out_dir / f"roll_source{roll.source}.bin")
        (out_dir / f"roll_source{roll.source}.csv").write_text(roll_to_csv(roll))
    _write_run_config(out_dir, args)
    print(json.dumps({"out_dir": str(out_dir),
                      "active_frames": [int(r.values.sum()) for r in rolls]}))
    return 0


def cmd_eval(args) -> int:
    from duetlab.metrics import CSV_HEADER, ProjectionConfig, evaluate_pair

    estimates = _load_stem_pair(args.est)
    references = _load_stem_pair(args.ref)
    config = ProjectionConfig(filter_length=int(args.filter_length))
    report = evaluate_pair(estimates, references, config)
    lines = [CSV_HEADER] + report.csv_rows(args.track_id)
    print("\n".join(lines))
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n")
        _write_run_config(out_dir, args)
    return 0


def cmd_pit_loss(args) -> int:
    from duetlab.losses import PitLossConfig, pit_l1_mixture_loss

    estimates = _load_stem_pair(args.est)
    references = _load_stem_pair(args.ref)
    config = PitLossConfig(float(args.alpha), float(args.beta))
    loss, perm = pit_l1_mixture_loss(
        (estimates[0].samples, estimates[1].samples),
        (references[0].samples, references[1].samples), config)
    print("loss,permutation")
    print(f"{loss:.9g},{'-'.join(str(p) for p in perm)}")
    return 0


def cmd_alpha_sweep(args) -> int:
    from duetlab.analysis import CURVE_CSV_HEADER, alpha_sweep, normalize_pair
    from duetlab.audio import read_wav, to_mono
    from duetlab.metrics import ProjectionConfig

    x1 = to_mono(read_wav(args.x1))
    x2 = to_mono(read_wav(args.x2))
    if args.normalize:
        x1, x2 = normalize_pair(x1, x2)
    grid = [float(a) for a in args.alphas.split(",")] if args.alphas else None
    curve = alpha_sweep(x1, x2, grid,
                        ProjectionConfig(filter_length=int(args.filter_length)),
                        label=args.label, jobs=int(args.jobs))
    lines = [CURVE_CSV_HEADER] + curve.csv_rows()
    print("\n".join(lines))
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
        _write_run_config(out_dir, args)
    return 0


def cmd_synth_duets(args) -> int:
    from duetlab.audio import write_wav
    from duetlab.dataset import Manifest, TrackEntry
    from duetlab.scores import write_notes_csv
    from duetlab.toy.synth import random_score, synth_duet

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(args.seed)
    entries = []
    for i in range(int(args.count)):
        score = random_score(float(args.seconds), seed=seed * 1000003 + 2 * i,
                             density=float(args.density))
        duet = synth_duet(score, sample_rate=int(args.sample_rate),
                          seed=seed * 1000003 + 2 * i + 1)
        track_id = f"duet{i:03d}"
        track_dir = out_dir / track_id
        track_dir.mkdir(exist_ok=True)
        write_wav(duet.stems[0], track_dir / "guitar1.wav")
        write_wav(duet.stems[1], track_dir / "guitar2.wav")
        write_wav(duet.mixture, track_dir / "mix.wav")
        write_notes_csv(score.events, track_dir / "notes.csv")
        entries.append(TrackEntry(
            track_id=track_id,
            stem_paths=(f"{track_id}/guitar1.wav", f"{track_id}/guitar2.wav"),
            mixture_path=f"{track_id}/mix.wav",
            notes_path=f"{track_id}/notes.csv",
            subset_tag="synthetic",
            duration=float(args.seconds),
        ))
    Manifest(tuple(entries), int(args.sample_rate)).save(out_dir / "manifest.json")
    _write_run_config(out_dir, args)
    print(json.dumps({"out_dir": str(out_dir), "tracks": len(entries)}))
    return 0


def cmd_toy_train(args) -> int:
    from duetlab.toy.separator import SeparatorConfig
    from duetlab.toy.train import (
        BenchmarkSpec,
        TrainConfig,
        make_benchmark_duets,
        save_checkpoint,
        train,
    )

    if args.benchmark:
        spec = BenchmarkSpec.from_json(Path(args.benchmark).read_text())
    else:
        spec = BenchmarkSpec(seed=int(args.seed), n_train=int(args.duets),
                             n_test=0, duet_seconds=float(args.seconds))
    train_duets, _ = make_benchmark_duets(spec)
    config = SeparatorConfig(conditioning=args.conditioning)
    train_config = TrainConfig(epochs=int(args.epochs), seed=int(args.seed),
                               learning_rate=float(args.learning_rate),
                               batch_size=int(args.batch_size), jobs=int(args.jobs))
    result = train(train_duets, config, train_config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.bin", result.params, config)
    (out_dir / "loss_curve.csv").write_text(result.curve_csv())
    (out_dir / "benchmark.json").write_text(spec.to_json())
    _write_run_config(out_dir, args)
    print(json.dumps({"out_dir": str(out_dir),
                      "final_train_loss": result.curve[-1][1],
                      "final_val_loss": result.curve[-1][2]}))
    return 0


def cmd_toy_eval(args) -> int:
    from duetlab.metrics import ProjectionConfig
    from duetlab.toy.train import BenchmarkSpec, evaluate_toy, load_checkpoint, make_benchmark_duets

    params, config = load_checkpoint(args.checkpoint)
    if args.benchmark:
        spec = BenchmarkSpec.from_json(Path(args.benchmark).read_text())
    else:
        spec = BenchmarkSpec(seed=int(args.seed))
    _, test_duets = make_benchmark_duets(spec)
    report = evaluate_toy(params, test_duets, config, mode=args.mode,
                          branches=args.branches,
                          degrade_drop=spec.degrade_drop,
                          degrade_jitter=spec.degrade_jitter,
                          seed=int(args.seed),
                          metric_config=ProjectionConfig(filter_length=int(args.filter_length)),
                          jobs=int(args.jobs))
    print(report.csv(), end="")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "toy_eval.csv").write_text(report.csv())
        _write_run_config(out_dir, args)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="duetlab", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--jobs", default="1", help="worker count (default 1, reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manifest", help="scan a track directory tree into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--sample-rate", default="44100")
    p.add_argument("--subset-tag", default="synthetic",
                   choices=("real", "synthetic", "external"))
    p.add_argument("--split", default=None, help="train ratio, e.g. 0.8")
    p.add_argument("--seed", default=None, help="required when --split is given")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("mix", help="average two stems into a mixture")
    p.add_argument("--stems", nargs=2, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoding", default="pcm16", choices=("pcm16", "float32"))
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("augment", help="one augmentation pass over a stem pair")
    p.add_argument("--stems", nargs=2, required=True)
    p.add_argument("--pool-stems", nargs="*", default=[],
                   help="extra stem pairs usable for remixing")
    p.add_argument("--seed", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--swap-probability", default="0.5")
    p.add_argument("--gain-low", default="0.7")
    p.add_argument("--gain-high", default="1.3")
    p.add_argument("--remix-probability", default="0.2")
    p.add_argument("--crop-seconds", default="4.0")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("rasterize", help="note CSV to binary piano rolls")
    p.add_argument("--notes", required=True)
    p.add_argument("--fps", default="100")
    p.add_argument("--duration", required=True)
    p.add_argument("--pitch-count", default="128")
    p.add_argument("--pitch-base", default="0")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("eval", help="paired separation metrics for two estimates")
    p.add_argument("--est", nargs=2, required=True)
    p.add_argument("--ref", nargs=2, required=True)
    p.add_argument("--filter-length", default="512")
    p.add_argument("--track-id", default="track")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pit-loss", help="debug: waveform loss between stem pairs")
    p.add_argument("--est", nargs=2, required=True)
    p.add_argument("--ref", nargs=2, required=True)
    p.add_argument("--alpha", default="0.8")
    p.add_argument("--beta", default="0.2")
    p.set_defaults(func=cmd_pit_loss)

    p = sub.add_parser("alpha-sweep", help="metric curves across mixing ratios")
    p.add_argument("--x1", required=True)
    p.add_argument("--x2", required=True)
    p.add_argument("--alphas", default=None, help="comma-separated grid")
    p.add_argument("--label", default="pair")
    p.add_argument("--filter-length", default="512")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_alpha_sweep)

    p = sub.add_parser("synth-duets", help="synthesize a duet dataset on disk")
    p.add_argument("--count", default="8")
    p.add_argument("--seconds", default="4.0")
    p.add_argument("--density", default="7.0")
    p.add_argument("--sample-rate", default="8000")
    p.add_argument("--seed", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth_duets)

    p = sub.add_parser("toy-train", help="train the toy separator")
    p.add_argument("--seed", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--benchmark", default=None, help="benchmark spec JSON path")
    p.add_argument("--duets", default="32")
    p.add_argument("--seconds", default="4.0")
    p.add_argument("--epochs", default="20")
    p.add_argument("--learning-rate", default="3e-3")
    p.add_argument("--batch-size", default="4")
    p.add_argument("--conditioning", default="ground_truth",
                   choices=("ground_truth", "none"))
    p.set_defaults(func=cmd_toy_train)

    p = sub.add_parser("toy-eval", help="evaluate a toy checkpoint on test duets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", required=True)
    p.add_argument("--benchmark", default=None)
    p.add_argument("--mode", default="ground_truth",
                   choices=("none", "ground_truth", "degraded"))
    p.add_argument("--branches", default="both",
                   choices=("both", "temporal", "spectral"))
    p.add_argument("--filter-length", default="512")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_toy_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # single-line machine-parsable failure contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
