import math

import numpy as np
import pytest

from msqm.autodiff import Tensor, ops, parameter
from msqm.config import ConfigError, TrainConfig, parse_config
from msqm.train import (
    Adam,
    TrainingError,
    comparison_table,
    evaluate,
    load_model,
    load_splits,
    mask_loss,
    train,
)

TINY = dict(epochs=2, clip_len=2, d=12, n_queries=2, heads=2, rounds=1, encoder_depth=1,
            height=32, width=32, train_clips=2, val_clips=2, max_objects=1)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    cfg = TrainConfig(**TINY)
    out = tmp_path_factory.mktemp("run")
    return cfg, out, train(cfg, out)


def test_mask_loss_closed_forms():
    gt = np.zeros((2, 4, 4))
    gt[:, :2] = 1
    assert mask_loss(Tensor(np.where(gt > 0, 20.0, -20.0)), gt).item() < 1e-6
    zero = mask_loss(Tensor(np.zeros((2, 4, 4))), gt).item()
    dice_half = 1 - 2 * (0.5 * 16) / (0.5 * 32 + 16)
    assert zero == pytest.approx(math.log(2) + dice_half, rel=1e-5)


def test_adam_first_step_is_signed_lr():
    p = parameter(np.array([1.0, -2.0, 3.0]))
    opt = Adam([p], lr=0.1)
    ops.sum(ops.mul(p, Tensor(np.array([2.0, -0.5, 0.0])))).backward()
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9, 3.0], atol=1e-6)
    assert (opt.b1, opt.b2, opt.eps) == (0.9, 0.999, 1e-8)


def test_config_defaults_and_parse():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.clip_len, cfg.lr, cfg.keep_ratio) == (15, 5, 1e-4, 0.5)
    assert (cfg.height, cfg.d, cfg.n_queries, cfg.heads, cfg.rounds, cfg.batch_size) == (64, 48, 5, 4, 2, 2)
    parsed = parse_config("# desk\nseed = 3\nlr = 2e-4  # faster\n\nmode = baseline\n", epochs=4)
    assert (parsed.seed, parsed.lr, parsed.mode, parsed.epochs) == (3, 2e-4, "baseline", 4)
    assert parse_config(cfg.dumps()) == cfg


@pytest.mark.parametrize("text", ["bogus = 1", "seed 3", "epochs = many", "keep_ratio = 0", "epochs = 0",
                                  "heads = 5", "mode = other"])
def test_config_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_train_writes_artifacts(tiny_run):
    cfg, out, result = tiny_run
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,val_miou"
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2"]
    assert (out / "checkpoint.msqm").exists() and (out / "config.txt").exists()
    assert result.best_miou == max(h[2] for h in result.history)


def test_identical_config_gives_identical_epoch1_loss(tiny_run, tmp_path):
    cfg, out, _ = tiny_run
    train(cfg.replace(epochs=1), tmp_path)
    first = (out / "metrics.csv").read_text().splitlines()[1]
    assert (tmp_path / "metrics.csv").read_text().splitlines()[1] == first


def test_nan_loss_aborts_with_step(monkeypatch, tmp_path):
    import msqm.train as train_mod

    monkeypatch.setattr(train_mod, "mask_loss", lambda logits, gt: ops.scale(ops.sum(logits), float("nan")))
    with pytest.raises(TrainingError, match="epoch 1, step 0"):
        train(TrainConfig(**TINY), tmp_path)


def test_evaluate_report_and_reproducible_csv(tiny_run, tmp_path):
    cfg, out, _ = tiny_run
    _, val = load_splits(cfg)
    a = evaluate(out / "checkpoint.msqm", val, cfg, "ours", tmp_path / "a")
    evaluate(out / "checkpoint.msqm", val, cfg, "ours", tmp_path / "b")
    csv_a = (tmp_path / "a" / "eval.csv").read_bytes()
    assert csv_a == (tmp_path / "b" / "eval.csv").read_bytes()
    assert csv_a.decode().splitlines()[0] == "clip_id,miou,j"
    assert len(a.per_clip) == 2 and 0.0 <= a.miou <= 1.0
    assert sorted(p.name for p in (tmp_path / "a" / "pred" / val[0].clip_id).iterdir()) == ["00000.pgm", "00001.pgm"]


def test_checkpoint_mode_mismatch(tiny_run):
    cfg, out, _ = tiny_run
    with pytest.raises(ValueError, match="baseline"):
        load_model(out / "checkpoint.msqm", cfg, "baseline")
    with pytest.raises(ValueError):
        load_model(out / "checkpoint.msqm", cfg.replace(d=16, heads=2))


def test_comparison_table_layout():
    table = comparison_table({"ours": {"synthetic": 0.7123}, "baseline": {"synthetic": 0.69}})
    assert table.splitlines() == [
        "method,synthetic",
        "Multiscale Query (baseline),69.0",
        "Multi-stage Multiscale Query-Memory,71.2",
    ]
