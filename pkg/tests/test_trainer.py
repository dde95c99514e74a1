import json

import numpy as np
import pytest

from triplestream.datagen import DatasetConfig, generate, split
from triplestream.evaluator import evaluate
from triplestream.exceptions import ConfigError, CorruptBlobError, NonFiniteError, TooFewClassesError, VersionMismatchError
from triplestream.losses import LossConfig
from triplestream.model import ModelConfig
from triplestream.trainer import History, TrainConfig, load_checkpoint, pk_sample, save_checkpoint, train

TOY_DATA = DatasetConfig(samples_for_largest_class=24, imbalance_ratio=3, snippet_len=3, height=3, width=3)
TOY_MODEL = ModelConfig(encoding_dim=6, conv_channels=(2,))
TOY_TRAIN = TrainConfig(epochs=2, steps_per_epoch=3, lr=0.02, k=3)


@pytest.fixture(scope="module")
def toy():
    return split(generate(TOY_DATA), 0.8, 0)


@pytest.fixture(scope="module")
def toy_run(toy):
    return train(TOY_TRAIN, TOY_MODEL, LossConfig(), *toy)


def test_pk_batch_shape():
    labels = np.repeat(np.arange(9), [40, 30, 20, 10, 6, 5, 3, 2, 1])
    batch = pk_sample(labels, 8, 4, np.random.default_rng(0))
    assert len(batch) == 32
    counts = np.unique(labels[batch], return_counts=True)[1]
    assert len(counts) == 8 and set(counts) == {4}


def test_pk_too_few_classes():
    with pytest.raises(TooFewClassesError):
        pk_sample(np.array([0, 0, 1, 1]), 3, 2, np.random.default_rng(0))


def test_pk_class_frequencies_uniform():
    labels = np.repeat(np.arange(9), [40, 30, 20, 10, 6, 5, 3, 2, 1])
    rng = np.random.default_rng(1)
    hits = np.zeros(9)
    n = 10000
    for _ in range(n):
        hits[np.unique(labels[pk_sample(labels, 8, 4, rng)])] += 1
    p = 8 / 9
    assert np.all(np.abs(hits - n * p) <= 3 * np.sqrt(n * p * (1 - p)))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=30)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)


def test_one_epoch_lowers_loss_on_two_classes():
    ds = generate(DatasetConfig(num_classes=2, head_classes=(0,), samples_for_largest_class=20,
                                imbalance_ratio=2, snippet_len=3, height=3, width=3))
    tr, te = split(ds, 0.8, 0)
    config = TrainConfig(batch_size=8, classes_per_batch=2, samples_per_class=4, epochs=1,
                         steps_per_epoch=10, lr=0.02)
    model = ModelConfig(num_classes=2, encoding_dim=6, conv_channels=(2,))
    _, hist = train(config, model, LossConfig(), tr, te, head_classes=(0,))
    assert hist[0].train_loss < hist.initial_loss


def test_history_shape(toy_run):
    ckpt, hist = toy_run
    assert [r.epoch for r in hist] == [1, 2]
    assert ckpt.epoch == 2
    assert all(0 <= r.test_top1 <= 1 and 0 <= r.train_top1 <= 1 for r in hist)


def test_deterministic_history(toy, toy_run):
    ckpt, hist = toy_run
    ckpt2, hist2 = train(TOY_TRAIN, TOY_MODEL, LossConfig(), *toy)
    assert hist.to_csv() == hist2.to_csv()
    assert ckpt.params.equals(ckpt2.params)


def test_wb_head_rows_bounded_every_epoch(toy):
    norms = []

    def record(epoch, params, _):
        norms.append(np.linalg.norm(params["head.weight"], axis=1).max())

    loss = LossConfig(family="WB", delta=0.5)
    train(TrainConfig(epochs=3, steps_per_epoch=2, lr=0.5, k=3), TOY_MODEL, loss, *toy, on_epoch_end=record)
    assert len(norms) == 3 and max(norms) <= 0.5 + 1e-6


def test_early_stop_callback(toy):
    ckpt, hist = train(TrainConfig(epochs=5, steps_per_epoch=1, k=3), TOY_MODEL, LossConfig(), *toy,
                       on_epoch_end=lambda e, p, r: e == 2)
    assert len(hist) == 2 and ckpt.epoch == 2


def test_train_without_test_set(toy):
    _, hist = train(TrainConfig(epochs=1, steps_per_epoch=1, k=3), TOY_MODEL, LossConfig(), toy[0], None)
    assert np.isnan(hist[0].test_top1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_abort(toy):
    with pytest.raises(NonFiniteError, match="epoch 1"):
        train(TrainConfig(epochs=1, steps_per_epoch=5, lr=1e200, k=3), TOY_MODEL, LossConfig(), *toy)


def test_history_csv_roundtrip(tmp_path, toy_run):
    _, hist = toy_run
    hist.write_csv(tmp_path / "h.csv")
    back = History.read_csv(tmp_path / "h.csv")
    assert back.records == hist.records


def test_checkpoint_roundtrip_preserves_evaluation(tmp_path, toy, toy_run):
    ckpt, _ = toy_run
    save_checkpoint(ckpt, tmp_path)
    back = load_checkpoint(tmp_path)
    assert back.params.equals(ckpt.params)
    assert back.model_config == ckpt.model_config and back.loss_config == ckpt.loss_config
    assert json.loads((tmp_path / "checkpoint.json").read_text())["epoch"] == 2
    before = evaluate(ckpt.params, ckpt.model_config, *toy, k=3)
    after = evaluate(back.params, back.model_config, *toy, k=3)
    assert before.to_json() == after.to_json()


def test_tampered_blob(tmp_path, toy_run):
    save_checkpoint(toy_run[0], tmp_path)
    blob = bytearray((tmp_path / "weights.bin").read_bytes())
    blob[17] ^= 0x01
    (tmp_path / "weights.bin").write_bytes(bytes(blob))
    with pytest.raises(CorruptBlobError):
        load_checkpoint(tmp_path)
    (tmp_path / "weights.bin").write_bytes(bytes(blob[:-8]))
    with pytest.raises(CorruptBlobError):
        load_checkpoint(tmp_path)


def test_version_mismatch(tmp_path, toy_run):
    save_checkpoint(toy_run[0], tmp_path)
    path = tmp_path / "checkpoint.json"
    manifest = json.loads(path.read_text())
    manifest["version"] = 99
    path.write_text(json.dumps(manifest))
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path)
