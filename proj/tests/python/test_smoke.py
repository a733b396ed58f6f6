import json
import math

import numpy as np
import pytest

import syncvsr

SMALL_WORLD = {
    "world": {
        "num_phonemes": 10,
        "num_visemes": 4,
        "num_words": 12,
        "homophene_pairs": 3,
        "max_word_length": 4,
        "visual_dim": 6,
        "audio_dim": 5,
        "audio_vocab": 16,
        "train_size": 40,
        "eval_size": 24,
        "min_eval_per_homophene": 2,
        "context_words": 0,
    },
    "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "ff_dim": 16, "decoder_layers": 1},
    "train": {"epochs": 2, "warmup_epochs": 1, "batch_size": 8, "eval_every": 1},
}


def test_metrics():
    assert syncvsr.levenshtein_str("million", "billion") == 1
    assert syncvsr.levenshtein([1, 2, 3], [1, 3]) == 1
    assert syncvsr.wer("a b", "a c b") == pytest.approx(1 / 3)
    assert syncvsr.perplexity(math.log(12.0)) == pytest.approx(12.0)
    assert syncvsr.mean_attention_distance(np.full((3, 3), 1 / 3)) == pytest.approx(8 / 9, abs=1e-12)
    with pytest.raises(syncvsr.Error):
        syncvsr.wer("a", "")


def test_losses():
    value, grad = syncvsr.ctc_loss(np.zeros((2, 3)), [0])
    assert value == pytest.approx(-math.log(3 / 9))
    assert grad.shape == (2, 3)
    grid = np.arange(20, dtype=np.uint16).reshape(5, 4) % 64
    value, _ = syncvsr.sync_loss(np.zeros((5, 4 * 64)), grid, 64)
    assert value == pytest.approx(math.log(64))
    mask = [True] * 5
    assert syncvsr.masked_sync_loss(np.zeros((5, 256)), grid, mask, 64)[0] == value
    assert syncvsr.total_loss(0.7, 3.0, 0.0) == 0.7
    assert syncvsr.lr_schedule(10, 10, 100, 1e-3) == 1e-3


def test_quantizer():
    x = np.array([[0.0], [0.0], [10.0], [10.0]])
    cb = syncvsr.fit_codebook(x, 2, 10, 0)
    assert cb.fit_distortion == 0.0
    assert sorted(cb.centroids[:, 0]) == [0.0, 10.0]
    grid, padded, truncated = syncvsr.align_tokens(list(range(10)), 3, 64)
    assert grid.shape == (3, 4)
    assert (padded, truncated) == (2, 0)
    assert grid[2, 3] == 64


def test_world_and_samples():
    world = syncvsr.build_world(SMALL_WORLD, 3)
    assert world.fingerprint() == syncvsr.build_world(SMALL_WORLD, 3).fingerprint()
    for a, b, _ in world.homophene_pairs():
        assert world.visemes(a) == world.visemes(b)
    s = syncvsr.render_sample(world, [0, 1], 0, 5)
    assert s["token_grid"].shape == (s["num_frames"], 4)
    with pytest.raises(syncvsr.Error):
        syncvsr.build_world({"world": {"num_visemes": 30, "num_phonemes": 10}}, 0)


def test_cli_train_evaluate(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(SMALL_WORLD))
    out = tmp_path / "run"
    code, _, err = syncvsr.run_cli(["generate-data", "--config", str(config), "--out", str(out), "--quiet"])
    assert code == 0, err
    ckpt, param_hash = syncvsr.train(SMALL_WORLD, out / "data", out / "train")
    assert len(param_hash) == 40
    report = syncvsr.evaluate(ckpt, out / "data" / "eval")
    assert 0.0 <= report["top1"] <= 1.0
    manifest_hash, samples = syncvsr.load_split(str(out / "data" / "eval"))
    assert len(samples) == 24

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"lamda": 1}}))
    code, _, err = syncvsr.run_cli(["train", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "train.lamda" in err
