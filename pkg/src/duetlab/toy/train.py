"""Training and evaluation harness for the toy separator.

Training is plain Adam over 2-second segments with the permutation-
invariant waveform loss; the consistency target is the sum of the stems
(not the stored average mixture). Runs are bit-reproducible for a fixed
seed and jobs=1; the sharded mode sums worker gradients in submission
order but is documented as not guaranteed reproducible.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from duetlab import losses
from duetlab.audio import AudioBuffer, segment
from duetlab.metrics import MetricReport, ProjectionConfig, evaluate_pair, format_db
from duetlab.scores import ConditioningPlanes, degrade_labels, roll_segment
from duetlab.toy import autodiff as ad
from duetlab.toy.separator import (
    BRANCH_CHOICES,
    CONDITIONING_MODES,
    SeparatorConfig,
    as_tensors,
    conditioning_planes,
    forward,
    init_params,
    separate,
    zero_conditioning,
)
from duetlab.toy.synth import DuetSample, TimbreParams, random_score, synth_duet

CHECKPOINT_MAGIC = b"DLCP"
CHECKPOINT_VERSION = 1

LOSS_CSV_HEADER = "epoch,train_loss,val_loss"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    val_fraction: float = 0.2
    loss: losses.PitLossConfig = field(default_factory=losses.PitLossConfig)
    jobs: int = 1


@dataclass(frozen=True)
class BenchmarkSpec:
    """Reproducible synthetic benchmark: duet counts, length, density."""

    seed: int = 7
    n_train: int = 32
    n_test: int = 8
    duet_seconds: float = 4.0
    density: float = 7.0
    sample_rate: int = 8000
    degrade_drop: float = 0.25
    degrade_jitter: int = 1

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkSpec":
        return cls(**json.loads(text))


# two same-family voicings, like two guitars of one build
BENCHMARK_TIMBRES = (TimbreParams(brightness=0.40, damping=0.985, pick_position=0.20),
                     TimbreParams(brightness=0.45, damping=0.982, pick_position=0.28))


def make_benchmark_duets(spec: BenchmarkSpec) -> tuple[list[DuetSample], list[DuetSample]]:
    """Synthesize the train and test duet lists for a benchmark spec."""

    def build(count, offset):
        duets = []
        for i in range(count):
            base = spec.seed * 1000003 + offset + 2 * i
            score = random_score(spec.duet_seconds, seed=base, density=spec.density)
            duets.append(synth_duet(score, BENCHMARK_TIMBRES, spec.sample_rate,
                                    seed=base + 1))
        return duets

    return build(spec.n_train, 0), build(spec.n_test, 500000)


@dataclass(frozen=True)
class _Segment:
    mixture: np.ndarray
    references: tuple[np.ndarray, np.ndarray]
    conditioning: ConditioningPlanes | None


def _duet_segments(duet: DuetSample, config: SeparatorConfig,
                   conditioned: bool) -> list[_Segment]:
    seconds = config.segment_seconds
    mix_segments = segment(duet.mixture, seconds, seconds)
    stem_segments = [segment(s, seconds, seconds) for s in duet.stems]
    out = []
    for k, mix in enumerate(mix_segments):
        cond = None
        if conditioned:
            rolls = tuple(roll_segment(r, k * seconds, seconds) for r in duet.rolls)
            cond = conditioning_planes(rolls, config)
        out.append(_Segment(
            mixture=mix.mono(),
            references=(stem_segments[0][k].mono(), stem_segments[1][k].mono()),
            conditioning=cond,
        ))
    return out


def _segment_loss_graph(params_t, seg: _Segment, config: SeparatorConfig,
                        loss_cfg: losses.PitLossConfig):
    est0, est1 = forward(params_t, seg.mixture, seg.conditioning, config)
    ref0, ref1 = seg.references
    _, perm = losses.pit_l1_mixture_loss((est0.value, est1.value), (ref0, ref1), loss_cfg)
    ests = (est0, est1)
    refs = (ad.constant(ref0), ad.constant(ref1))
    pit_term = ad.add(ad.mean_abs(ad.sub(ests[perm[0]], refs[0])),
                      ad.mean_abs(ad.sub(ests[perm[1]], refs[1])))
    mix_term = ad.mean_abs(ad.sub(ad.add(est0, est1), ad.constant(ref0 + ref1)))
    return ad.add(ad.scale(pit_term, loss_cfg.alpha_weight),
                  ad.scale(mix_term, loss_cfg.beta_weight))


def _segment_loss_value(params: dict[str, np.ndarray], seg: _Segment,
                        config: SeparatorConfig, loss_cfg) -> float:
    outs = forward(as_tensors(params, trainable=False), seg.mixture,
                   seg.conditioning, config)
    loss, _ = losses.pit_l1_mixture_loss((outs[0].value, outs[1].value),
                                         seg.references, loss_cfg)
    return loss


def _grads_for_segment(params, seg, config, loss_cfg):
    params_t = as_tensors(params, trainable=True)
    loss = _segment_loss_graph(params_t, seg, config, loss_cfg)
    ad.backward(loss)
    return float(loss.value), {name: t.grad for name, t in params_t.items()}


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    curve: list[tuple[int, float, float]]
    config: SeparatorConfig
    train_config: TrainConfig

    def curve_csv(self) -> str:
        lines = [LOSS_CSV_HEADER]
        lines += [f"{epoch},{train:.12g},{val:.12g}" for epoch, train, val in self.curve]
        return "\n".join(lines) + "\n"


def train(duets: list[DuetSample], config: SeparatorConfig,
          train_config: TrainConfig = TrainConfig(),
          on_epoch=None) -> TrainResult:
    """Adam training of the separator on synthesized duets.

    Raises RuntimeError with a diagnostic if the loss stops being finite.
    The recorded curve starts at epoch 0 (pre-update losses). on_epoch,
    when given, is called as on_epoch(epoch, params) after each epoch.
    """
    if len(duets) < 8:
        raise ValueError(f"need at least 8 training duets, got {len(duets)}")
    conditioned = config.conditioning != "none"
    rng = np.random.default_rng(train_config.seed)

    all_segments: list[_Segment] = []
    duet_of_segment: list[int] = []
    for d_idx, duet in enumerate(duets):
        for seg in _duet_segments(duet, config, conditioned):
            all_segments.append(seg)
            duet_of_segment.append(d_idx)

    n_val_duets = max(1, int(round(train_config.val_fraction * len(duets))))
    order = rng.permutation(len(duets))
    val_duets = set(int(i) for i in order[:n_val_duets])
    train_idx = [i for i, d in enumerate(duet_of_segment) if d not in val_duets]
    val_idx = [i for i, d in enumerate(duet_of_segment) if d in val_duets]

    params = init_params(config, seed=train_config.seed)
    adam_m = {name: np.zeros_like(v) for name, v in params.items()}
    adam_v = {name: np.zeros_like(v) for name, v in params.items()}
    step = 0

    def mean_loss(indices):
        if not indices:
            return math.nan
        vals = [_segment_loss_value(params, all_segments[i], config, train_config.loss)
                for i in indices]
        return float(np.mean(vals))

    curve = [(0, mean_loss(train_idx), mean_loss(val_idx))]

    for epoch in range(1, train_config.epochs + 1):
        shuffled = [train_idx[i] for i in rng.permutation(len(train_idx))]
        epoch_losses = []
        for start in range(0, len(shuffled), train_config.batch_size):
            batch = shuffled[start:start + train_config.batch_size]
            grad_sum = {name: np.zeros_like(v) for name, v in params.items()}
            if train_config.jobs > 1:
                with ThreadPoolExecutor(max_workers=train_config.jobs) as pool:
                    results = list(pool.map(
                        lambda i: _grads_for_segment(params, all_segments[i], config,
                                                     train_config.loss), batch))
            else:
                results = [_grads_for_segment(params, all_segments[i], config,
                                              train_config.loss) for i in batch]
            batch_loss = 0.0
            for loss_value, grads in results:
                batch_loss += loss_value
                for name in grad_sum:
                    grad_sum[name] += grads[name]
            batch_loss /= len(batch)
            epoch_losses.append(batch_loss)
            if not math.isfinite(batch_loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: batch loss {batch_loss}")

            step += 1
            bias1 = 1.0 - train_config.beta1 ** step
            bias2 = 1.0 - train_config.beta2 ** step
            for name in params:
                g = grad_sum[name] / len(batch)
                adam_m[name] = train_config.beta1 * adam_m[name] + (1 - train_config.beta1) * g
                adam_v[name] = train_config.beta2 * adam_v[name] + (1 - train_config.beta2) * g * g
                update = (adam_m[name] / bias1) / (np.sqrt(adam_v[name] / bias2)
                                                   + train_config.adam_eps)
                params[name] = params[name] - train_config.learning_rate * update

        curve.append((epoch, float(np.mean(epoch_losses)), mean_loss(val_idx)))
        if on_epoch is not None:
            on_epoch(epoch, params)

    return TrainResult(params, curve, config, train_config)


def _ablated(cond: ConditioningPlanes, branches: str,
             config: SeparatorConfig) -> ConditioningPlanes:
    if branches == "both":
        return cond
    zero = zero_conditioning(config)
    if branches == "temporal":
        return ConditioningPlanes(cond.temporal, zero.spectral)
    if branches == "spectral":
        return ConditioningPlanes(zero.temporal, cond.spectral)
    raise ValueError(f"unknown branch selection {branches!r}")


def _eval_conditioning(duet: DuetSample, seg_index: int, duet_index: int,
                       config: SeparatorConfig, mode: str, branches: str,
                       spec_drop: float, spec_jitter: int, seed: int):
    if mode == "none":
        return None
    seconds = config.segment_seconds
    rolls = tuple(roll_segment(r, seg_index * seconds, seconds) for r in duet.rolls)
    if mode == "degraded":
        degraded = []
        for source, roll in enumerate(rolls):
            sub_seed = int(np.random.SeedSequence(
                [seed, duet_index, seg_index, source]).generate_state(1)[0])
            degraded.append(degrade_labels(roll, spec_drop, spec_jitter, sub_seed))
        rolls = tuple(degraded)
    return _ablated(conditioning_planes(rolls, config), branches, config)


@dataclass
class ToyEvalReport:
    mode: str
    branches: str
    rows: list[tuple[str, MetricReport]]
    mean: tuple               # per-source SourceMetrics-like tuples of means
    median: tuple

    @property
    def mean_si_sdr(self) -> float:
        return float(np.mean([m.si_sdr for m in self.mean]))

    def csv(self) -> str:
        from duetlab.metrics import CSV_HEADER
        lines = [CSV_HEADER]
        for track_id, report in self.rows:
            lines += report.csv_rows(track_id)
        for j, m in enumerate(self.mean):
            lines.append(",".join([f"mean[{self.mode}/{self.branches}]", f"G{j+1}", "-",
                                   format_db(m.sdr), format_db(m.si_sdr),
                                   format_db(m.sar), format_db(m.sir)]))
        for j, m in enumerate(self.median):
            lines.append(",".join([f"median[{self.mode}/{self.branches}]", f"G{j+1}", "-",
                                   format_db(m.sdr), format_db(m.si_sdr),
                                   format_db(m.sar), format_db(m.sir)]))
        return "\n".join(lines) + "\n"


def evaluate_toy(params: dict[str, np.ndarray], test_duets: list[DuetSample],
                 config: SeparatorConfig, mode: str = "ground_truth",
                 branches: str = "both", degrade_drop: float = 0.25,
                 degrade_jitter: int = 1, seed: int = 0,
                 metric_config: ProjectionConfig = ProjectionConfig(),
                 jobs: int = 1) -> ToyEvalReport:
    """Separate every test duet and aggregate paired metrics per source."""
    if mode not in CONDITIONING_MODES:
        raise ValueError(f"unknown conditioning mode {mode!r}")
    if branches not in BRANCH_CHOICES:
        raise ValueError(f"unknown branch selection {branches!r}")

    def eval_one(item):
        duet_index, duet = item
        seconds = config.segment_seconds
        mix_segments = segment(duet.mixture, seconds, seconds)
        estimates = [[], []]
        for k, mix in enumerate(mix_segments):
            cond = _eval_conditioning(duet, k, duet_index, config, mode, branches,
                                      degrade_drop, degrade_jitter, seed)
            outs = separate(params, mix.mono(), cond, config)
            estimates[0].append(outs[0])
            estimates[1].append(outs[1])
        n = duet.mixture.n_samples
        est_bufs = [np.concatenate(chunks)[:n] for chunks in estimates]
        report = evaluate_pair(
            [AudioBuffer(e, config.sample_rate) for e in est_bufs],
            [duet.stems[0], duet.stems[1]], metric_config)
        return f"duet{duet_index:03d}", report

    items = list(enumerate(test_duets))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(eval_one, items))
    else:
        rows = [eval_one(item) for item in items]

    from duetlab.metrics import SourceMetrics

    def aggregate(reduce_fn):
        out = []
        for j in range(2):
            out.append(SourceMetrics(
                sdr=float(reduce_fn([r.per_source[j].sdr for _, r in rows])),
                si_sdr=float(reduce_fn([r.per_source[j].si_sdr for _, r in rows])),
                sar=float(reduce_fn([r.per_source[j].sar for _, r in rows])),
                sir=float(reduce_fn([r.per_source[j].sir for _, r in rows])),
            ))
        return tuple(out)

    return ToyEvalReport(mode, branches, rows, aggregate(np.mean), aggregate(np.median))


def save_checkpoint(path, params: dict[str, np.ndarray],
                    config: SeparatorConfig) -> None:
    """Versioned binary checkpoint: header, config JSON, named float64 blobs."""
    config_json = json.dumps(config.__dict__, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(config_json)))
        fh.write(config_json)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            encoded = name.encode()
            value = np.ascontiguousarray(params[name], dtype="<f8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], SeparatorConfig]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, config_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        doc = json.loads(fh.read(config_len).decode())
        for key in ("temporal_channels", "spectral_channels", "spectral_kernels",
                    "spectral_strides", "spectral_paddings"):
            doc[key] = tuple(doc[key])
        config = SeparatorConfig(**doc)
        (count,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8")
            params[name] = data.reshape(shape).astype(np.float64)
    return params, config
