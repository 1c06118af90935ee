import csv

import numpy as np
import pytest

from whispasr.encoder import AcousticModel, EncoderConfig, init_params
from whispasr.features import FeatureMatrix
from whispasr.optim import OptimizerConfig
from whispasr.trainer import (Example, TrainingAborted, TransferPlan, error_rate_pct, finetune_layerwise,
                              parse_kv_config, format_kv_config, pretrain, screen, train, unfrozen_groups)

from helpers import high_band_task

CFG = EncoderConfig(n_mels=16, in_channels=1, extractor="standard", conv_channels=(2, 4), n_layers=2,
                    units_per_direction=4, vocab_size=4)


def quick_opt(steps=5, seed=0, kind="adam", lr=3e-3):
    return OptimizerConfig(kind=kind, learning_rate=lr, batch_size=2, max_steps=steps, seed=seed)


def entries(store):
    return {k: (p.value.astype("<f4").tobytes(), p.layer_index, p.frozen) for k, p in store.items()}


@pytest.fixture(scope="module")
def data():
    return high_band_task(8, seed=3)


@pytest.fixture(scope="module")
def pretrained(data):
    return pretrain(data, CFG, None, quick_opt(steps=10))


def test_same_seed_identical_bytes(data):
    a = pretrain(data, CFG, None, quick_opt(seed=4))
    b = pretrain(data, CFG, None, quick_opt(seed=4))
    c = pretrain(data, CFG, None, quick_opt(seed=5))
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != c.to_bytes()


def test_zero_steps_returns_init(data):
    store = pretrain(data, CFG, None, quick_opt(steps=0, seed=2))
    assert store.to_bytes() == init_params(CFG, 2).to_bytes()


def test_training_lowers_loss_on_easy_task():
    examples = high_band_task(20, seed=0)
    model = AcousticModel(CFG, init_params(CFG, 0))
    before = error_rate_pct(model, examples)
    losses = []
    train(model, examples, OptimizerConfig(kind="adam", learning_rate=3e-3, batch_size=1, max_steps=300),
          callback=lambda step, loss: losses.append(loss))
    assert np.mean(losses[-30:]) < np.mean(losses[:30])
    assert error_rate_pct(model, examples) < before


def test_bottom_k_zero_is_identity(pretrained, data):
    out = finetune_layerwise(TransferPlan(pretrained, 0), data, quick_opt())
    assert out.to_bytes() == pretrained.to_bytes()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_freeze_invariance(pretrained, data, k):
    before = entries(pretrained)
    out = finetune_layerwise(TransferPlan(pretrained, k), data, quick_opt(kind="sgd", lr=0.05))
    after = entries(out)
    trained = set(range(k))
    changed = {name for name in before if before[name] != after[name]}
    assert changed, "fine-tuning moved nothing"
    for name in before:
        if pretrained[name].layer_index not in trained:
            assert after[name] == before[name], name
    assert entries(pretrained) == before  # input store untouched


def test_frozen_flags_restored(pretrained, data):
    store = pretrained.copy()
    store["proj.w"].frozen = True
    flags = store.frozen_flags()
    out = finetune_layerwise(TransferPlan(store, 1), data, quick_opt())
    assert out.frozen_flags() == flags


def test_finetune_from_checkpoint_path(tmp_path, pretrained, data):
    path = pretrained.save(tmp_path / "pre.wck")
    out = finetune_layerwise(TransferPlan(path, 1), data, quick_opt())
    assert set(out.names()) == set(pretrained.names())


def test_unfrozen_groups():
    assert unfrozen_groups(TransferPlan(None, 3), 2) == [0, 1, 2]
    assert unfrozen_groups(TransferPlan(None, 1, include_extractor=False), 2) == [1]
    assert unfrozen_groups(TransferPlan(None, 0, include_output_layer=True), 2) == [3]
    for k in (-1, 4):
        with pytest.raises(ValueError):
            unfrozen_groups(TransferPlan(None, k), 2)


def test_bottom_k_out_of_range_raises(pretrained, data):
    with pytest.raises(ValueError):
        finetune_layerwise(TransferPlan(pretrained, 4), data, quick_opt())


def too_short(uid):
    return Example(uid, FeatureMatrix(np.zeros((4, 16)), 16, 10), np.array([1, 2, 3]), ["1", "2", "3"])


def test_screen_skips_and_aborts(data, caplog):
    kept = screen(list(data[:3]) + [too_short("x")])
    assert len(kept) == 3 and "skipping 1" in caplog.text
    with pytest.raises(TrainingAborted):
        screen([data[0], too_short("x"), too_short("y")])
    with pytest.raises(TrainingAborted):
        screen([])


def test_log_csv_and_checkpoints(tmp_path, data):
    model = AcousticModel(CFG, init_params(CFG, 0))
    train(model, data, quick_opt(steps=4), dev=data[:2], eval_every=2, log_path=tmp_path / "log.csv",
          checkpoint_dir=tmp_path, checkpoint_every=2)
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert list(rows[0]) == ["step", "mean_loss", "dev_cer", "wall_ms"]
    assert [r["step"] for r in rows] == ["1", "2", "3", "4"]
    assert [bool(r["dev_cer"]) for r in rows] == [False, True, False, True]
    assert sorted(p.name for p in tmp_path.glob("*.wck")) == ["step000002.wck", "step000004.wck"]


def test_kv_config_roundtrip_and_errors():
    text = "# experiment\nlr = 0.01\nmix = mix_random  # trailing\n\nseed=3\n"
    d = parse_kv_config(text)
    assert d == {"lr": "0.01", "mix": "mix_random", "seed": "3"}
    assert parse_kv_config(format_kv_config(d)) == d
    with pytest.raises(ValueError, match="duplicate"):
        parse_kv_config("a = 1\na = 2\n")
    with pytest.raises(ValueError):
        parse_kv_config("no equals sign\n")
