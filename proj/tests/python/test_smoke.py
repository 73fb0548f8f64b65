import json
import math

import numpy as np
import pytest

import diclet

TINY_CORPUS = dict(
    num_speakers=3,
    num_emotional_speakers=1,
    emotions=["neutral", "happy"],
    tempo=[1.0, 0.7],
    utterances_per_cell=48,
    vocab_size=12,
    bands=8,
    tokens_min=3,
    tokens_max=5,
)


def test_mel_round_trip(tmp_path):
    mel = np.random.default_rng(0).normal(size=(13, 8)).astype(np.float32)
    diclet.write_mel(mel, tmp_path / "a.dmel")
    back = diclet.read_mel(tmp_path / "a.dmel")
    assert back.shape == (13, 8)
    assert np.array_equal(back, mel)


def test_length_regulate_matches_repeat():
    rows = np.arange(6, dtype=np.float64).reshape(3, 2)
    out = diclet.length_regulate(rows, [2, 1, 3])
    assert np.array_equal(out, np.repeat(rows, [2, 1, 3], axis=0))
    with pytest.raises(diclet.DicletError):
        diclet.length_regulate(rows, [1, 0, 1])


def test_opl_worked_examples():
    h = math.sqrt(2) / 2
    assert diclet.orthogonal_projection_loss([[1, 0], [1, 0], [0, 1]], [0, 0, 1]) == pytest.approx(0.0, abs=1e-9)
    assert diclet.orthogonal_projection_loss([[1, 0], [h, h]], [0, 0]) == pytest.approx(1 - h, abs=1e-9)


def test_schedule_and_oracle():
    s = diclet.schedule(1.0)
    assert s["cumulative"] == pytest.approx(0.05 + 0.5 * 19.95)
    assert s["variance"] == pytest.approx(-math.expm1(-s["cumulative"]))
    report = diclet.diffusion_oracle(paths=4000, sampler_runs=1000)
    assert report["zero_loss"] < 1e-8
    assert set(report) >= {"forward", "ode", "sde"}


def test_probe_separable():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(-4, 0.5, (30, 3)), rng.normal(4, 0.5, (30, 3))])
    labels = [0] * 30 + [1] * 30
    assert diclet.linear_probe(x, labels, seed=2) == 1.0


def test_end_to_end(tmp_path):
    info = diclet.generate_corpus(tmp_path / "data", **TINY_CORPUS)
    assert info["utterances"] == 4 * 48
    manifest = info["manifest"]
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "model": {"d_model": 16, "text_blocks": 1, "ffn_hidden": 16, "emotion_dim": 8,
                  "reference_channels": [4, 4], "reference_hidden": 8, "speaker_dim": 8,
                  "decoder_channels": 8, "decoder_mults": [1, 2]},
        "train": {"batch_size": 4, "steps": 3, "learning_rate": 1e-3},
        "eval": {"ode_steps": 3, "probe_repeats": 1, "transfer_trials": 1,
                 "oracle_paths": 1000, "oracle_ode_samples": 200},
    }))
    assert diclet.train(manifest, tmp_path / "run", config=config) == 0
    ckpt = diclet.Checkpoint(tmp_path / "run" / "checkpoint.pt")
    assert ckpt.step == 3
    assert diclet.checkpoint_config(ckpt)["num_speakers"] == 3

    ref = diclet.read_mel(tmp_path / "data" / "mels" / "s0_happy_0000.dmel")
    mel = ckpt.synthesize([0, 1, 2], speaker=2, reference=ref, steps=3, seed=5)
    again = ckpt.synthesize([0, 1, 2], speaker=2, reference=ref, steps=3, seed=5)
    assert mel.shape[1] == 8 and mel.shape[0] >= 3
    assert np.array_equal(mel, again)
    assert ckpt.embed(ref).shape == (8,)
    with pytest.raises(diclet.DicletError, match="unknown speaker id 7"):
        ckpt.synthesize([0, 1], speaker=7, reference=ref, steps=2)

    assert diclet.evaluate(tmp_path / "run" / "checkpoint.pt", manifest, tmp_path / "eval", config=config) == 0
    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert "disentanglement" in report and "cross_transfer" in report
