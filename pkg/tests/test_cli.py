import json
import subprocess
import sys

import numpy as np
import pytest

from duetlab.audio import AudioBuffer, read_wav, write_wav


def run_cli(*args, env=None):
    import os

    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run([sys.executable, "-m", "duetlab", *args],
                          capture_output=True, text=True, env=full_env)


@pytest.fixture(scope="module")
def wav_pair(tmp_path_factory):
    root = tmp_path_factory.mktemp("wavs")
    rng = np.random.default_rng(0)
    paths = []
    for name in ("a1.wav", "a2.wav"):
        path = root / name
        write_wav(AudioBuffer(rng.normal(size=(1, 4000)) * 0.1, 8000), path)
        paths.append(str(path))
    return paths


def test_unknown_subcommand_exits_2():
    proc = run_cli("frobnicate")
    assert proc.returncode == 2
    assert "usage" in proc.stderr.lower()


def test_unknown_flag_exits_2():
    proc = run_cli("mix", "--no-such-flag")
    assert proc.returncode == 2
    assert "usage" in proc.stderr.lower()


def test_runtime_failure_exits_1_with_parsable_error(tmp_path):
    proc = run_cli("mix", "--stems", "missing1.wav", "missing2.wav",
                   "--out", str(tmp_path / "out.wav"))
    assert proc.returncode == 1
    assert proc.stderr.startswith("error: ")
    assert proc.stderr.count("\n") == 1


def test_mix_happy_path(wav_pair, tmp_path):
    out = tmp_path / "mix.wav"
    proc = run_cli("mix", "--stems", *wav_pair, "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(proc.stdout)
    assert doc["samples"] == 4000
    a = read_wav(wav_pair[0])
    b = read_wav(wav_pair[1])
    mix = read_wav(out)
    np.testing.assert_allclose(mix.samples, (a.samples + b.samples) / 2, atol=1e-4)


def test_eval_stdout_csv(wav_pair):
    proc = run_cli("eval", "--est", *wav_pair, "--ref", *wav_pair,
                   "--filter-length", "4")
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.strip().split("\n")
    assert lines[0] == "track_id,source,permutation,sdr,si_sdr,sar,sir"
    assert len(lines) == 3
    assert "inf" in lines[1]


def test_pit_loss_subcommand(wav_pair):
    proc = run_cli("pit-loss", "--est", *wav_pair, "--ref", *wav_pair)
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.strip().split("\n")
    assert lines[0] == "loss,permutation"
    loss, perm = lines[1].split(",")
    assert float(loss) == 0.0
    assert perm == "0-1"


def test_alpha_sweep_subcommand(wav_pair, tmp_path):
    out_dir = tmp_path / "sweep"
    proc = run_cli("alpha-sweep", "--x1", wav_pair[0], "--x2", wav_pair[1],
                   "--alphas", "0.2,0.5,0.8", "--filter-length", "2",
                   "--normalize", "--out-dir", str(out_dir))
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.strip().split("\n")
    assert lines[0] == "alpha,sdr_db,si_sdr_db,snr_db,pair_label"
    assert len(lines) == 4
    assert (out_dir / "sweep.csv").exists()
    assert (out_dir / "run_config.json").exists()


def test_rasterize_subcommand(tmp_path):
    notes = tmp_path / "notes.csv"
    notes.write_text("source,pitch,onset,offset\n0,60,0.0,0.5\n1,64,0.25,0.75\n")
    out_dir = tmp_path / "rolls"
    proc = run_cli("rasterize", "--notes", str(notes), "--duration", "1.0",
                   "--out-dir", str(out_dir))
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(proc.stdout)
    assert doc["active_frames"] == [50, 50]
    assert (out_dir / "roll_source0.bin").exists()
    assert (out_dir / "run_config.json").exists()


def test_synth_duets_writes_layout_and_manifest(tmp_path):
    out_dir = tmp_path / "data"
    proc = run_cli("synth-duets", "--count", "2", "--seconds", "2.0",
                   "--seed", "5", "--out-dir", str(out_dir))
    assert proc.returncode == 0, proc.stderr
    for tid in ("duet000", "duet001"):
        for name in ("guitar1.wav", "guitar2.wav", "mix.wav", "notes.csv"):
            assert (out_dir / tid / name).exists()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert len(manifest["entries"]) == 2
    config = json.loads((out_dir / "run_config.json").read_text())
    assert config["seed"] == "5"
    # stored mixture equals the stem average
    g1 = read_wav(out_dir / "duet000" / "guitar1.wav")
    g2 = read_wav(out_dir / "duet000" / "guitar2.wav")
    mix = read_wav(out_dir / "duet000" / "mix.wav")
    np.testing.assert_allclose(mix.samples, (g1.samples + g2.samples) / 2, atol=1e-4)


def test_synth_duets_requires_seed(tmp_path):
    proc = run_cli("synth-duets", "--count", "1", "--out-dir", str(tmp_path / "x"))
    assert proc.returncode == 2


def test_manifest_split_requires_seed(tmp_path):
    out_dir = tmp_path / "data"
    run_cli("synth-duets", "--count", "2", "--seconds", "1.0", "--seed", "1",
            "--out-dir", str(out_dir))
    proc = run_cli("manifest", "--root", str(out_dir), "--split", "0.5")
    assert proc.returncode == 1
    assert "seed" in proc.stderr

    ok = run_cli("manifest", "--root", str(out_dir), "--split", "0.5", "--seed", "3",
                 "--sample-rate", "8000")
    assert ok.returncode == 0, ok.stderr
    doc = json.loads(ok.stdout)
    assert set(doc["split_assignments"].values()) == {"train", "val"}


def test_augment_subcommand(wav_pair, tmp_path):
    out_dir = tmp_path / "aug"
    proc = run_cli("augment", "--stems", *wav_pair, "--seed", "9",
                   "--out-dir", str(out_dir), "--crop-seconds", "0.25",
                   "--remix-probability", "0")
    assert proc.returncode == 0, proc.stderr
    for name in ("guitar1.wav", "guitar2.wav", "mix.wav", "run_config.json"):
        assert (out_dir / name).exists()
    g1 = read_wav(out_dir / "guitar1.wav")
    g2 = read_wav(out_dir / "guitar2.wav")
    mix = read_wav(out_dir / "mix.wav")
    np.testing.assert_allclose(mix.samples, (g1.samples + g2.samples) / 2, atol=1e-4)


def test_env_var_flag_override(wav_pair, tmp_path):
    out = tmp_path / "env_mix.wav"
    proc = run_cli("mix", "--stems", *wav_pair, "--out", str(out),
                   env={"DUETLAB_ENCODING": "float32"})
    assert proc.returncode == 0, proc.stderr
    buf = read_wav(out)
    a = read_wav(wav_pair[0])
    b = read_wav(wav_pair[1])
    np.testing.assert_allclose(buf.samples, (a.samples + b.samples) / 2, atol=1e-7)


def test_seeded_cli_reproducibility(tmp_path):
    """Criterion: repeated seeded runs are byte-identical."""
    dirs = [tmp_path / "runA", tmp_path / "runB"]
    for d in dirs:
        proc = run_cli("synth-duets", "--count", "2", "--seconds", "1.0",
                       "--seed", "17", "--out-dir", str(d))
        assert proc.returncode == 0, proc.stderr
    for rel in ("duet000/guitar1.wav", "duet000/guitar2.wav", "duet000/mix.wav",
                "duet000/notes.csv", "duet001/mix.wav", "manifest.json"):
        assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes(), rel


def test_toy_train_and_eval_cli(tmp_path):
    out_a = tmp_path / "toyA"
    out_b = tmp_path / "toyB"
    spec = tmp_path / "bench.json"
    spec.write_text(json.dumps({
        "seed": 13, "n_train": 8, "n_test": 2, "duet_seconds": 2.0,
        "density": 7.0, "sample_rate": 8000,
        "degrade_drop": 0.25, "degrade_jitter": 1}) + "\n")
    for out in (out_a, out_b):
        proc = run_cli("toy-train", "--seed", "13", "--benchmark", str(spec),
                       "--epochs", "1", "--out-dir", str(out))
        assert proc.returncode == 0, proc.stderr
    # byte-identical checkpoints and loss curves across reruns
    assert (out_a / "checkpoint.bin").read_bytes() == (out_b / "checkpoint.bin").read_bytes()
    assert (out_a / "loss_curve.csv").read_bytes() == (out_b / "loss_curve.csv").read_bytes()
    curve = (out_a / "loss_curve.csv").read_text().strip().split("\n")
    assert curve[0] == "epoch,train_loss,val_loss"
    assert len(curve) == 3  # header + epoch 0 + epoch 1

    proc = run_cli("toy-eval", "--checkpoint", str(out_a / "checkpoint.bin"),
                   "--seed", "13", "--benchmark", str(spec),
                   "--mode", "ground_truth", "--filter-length", "64",
                   "--out-dir", str(tmp_path / "eval"))
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.strip().split("\n")
    assert lines[0] == "track_id,source,permutation,sdr,si_sdr,sar,sir"
    assert len(lines) == 1 + 2 * 2 + 4
    assert (tmp_path / "eval" / "toy_eval.csv").exists()
