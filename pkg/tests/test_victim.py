"""Victim training, evaluation, and checkpoint round-trips."""

import numpy as np
import pytest

from sib import (AnnClassifier, SnnClassifier, VictimConfig,
                 assert_matched_architecture, checkpoint_from_estimator,
                 estimator_from_checkpoint, evaluate_accuracy, load_checkpoint,
                 load_victim, save_checkpoint, train_victim)
from sib.errors import ConfigError, DataError, TrainingError

from conftest import make_blobs_unit


def test_ann_learns_separable_blobs():
    x, y = make_blobs_unit(n_per_class=60, d=8, n_classes=2, seed=3)
    ann = AnnClassifier(hidden_dim=32, epochs=5, batch_size=32, seed=0).fit(x, y)
    assert ann.score(x, y) == 1.0


def test_snn_learns_separable_blobs():
    x, y = make_blobs_unit(n_per_class=50, d=8, n_classes=2, seed=4, spread=0.04)
    snn = SnnClassifier(hidden_dim=32, epochs=8, batch_size=32, steps=10,
                        seed=0).fit(x, y)
    assert snn.score(x, y) >= 0.98


def test_training_is_deterministic():
    x, y = make_blobs_unit(seed=5)
    a = AnnClassifier(hidden_dim=16, epochs=3, seed=9).fit(x, y)
    b = AnnClassifier(hidden_dim=16, epochs=3, seed=9).fit(x, y)
    for pa, pb in zip(a.net_.param_list(), b.net_.param_list()):
        assert np.array_equal(pa, pb)


def test_snn_training_is_deterministic():
    x, y = make_blobs_unit(seed=6, d=6)
    a = SnnClassifier(hidden_dim=12, epochs=2, steps=6, seed=9).fit(x, y)
    b = SnnClassifier(hidden_dim=12, epochs=2, steps=6, seed=9).fit(x, y)
    for pa, pb in zip(a.net_.param_list(), b.net_.param_list()):
        assert np.array_equal(pa, pb)


def test_victims_share_architecture():
    x, y = make_blobs_unit(seed=7, d=6)
    ann = AnnClassifier(hidden_dim=20, epochs=1, seed=0).fit(x, y)
    snn = SnnClassifier(hidden_dim=20, epochs=1, steps=4, seed=0).fit(x, y)
    assert_matched_architecture(ann, snn)
    other = AnnClassifier(hidden_dim=24, epochs=1, seed=0).fit(x, y)
    with pytest.raises(ConfigError):
        assert_matched_architecture(other, snn)


def test_divergence_raises_training_error():
    x, y = make_blobs_unit(seed=8)
    ann = AnnClassifier(hidden_dim=8, epochs=2, learning_rate=float("nan"), seed=0)
    with pytest.raises(TrainingError) as err:
        ann.fit(x, y)
    assert "epoch" in str(err.value) and "batch" in str(err.value)


def test_constant_class_predictor_scores_chance():
    x, y = make_blobs_unit(n_per_class=10, d=4, n_classes=10, seed=9, spread=0.01)
    ann = AnnClassifier(hidden_dim=4, epochs=1, seed=0).fit(x, y)
    # force an always-class-0 predictor
    for p in ann.net_.param_list():
        p[...] = 0.0
    ann.net_.layers[-1].bias[0] = 10.0
    assert evaluate_accuracy(ann, (x, y)) == pytest.approx(0.10)


def test_evaluation_is_repeatable(tiny_snn, digits_data):
    _, _, xte, yte = digits_data
    first = evaluate_accuracy(tiny_snn, (xte[:100], yte[:100]))
    second = evaluate_accuracy(tiny_snn, (xte[:100], yte[:100]))
    assert first == second


def test_train_victim_records_history():
    x, y = make_blobs_unit(seed=10)
    cfg = VictimConfig(kind="ann", hidden_dim=16, epochs=3, batch_size=32, seed=2)
    ckpt = train_victim(cfg, (x[:80], y[:80]), (x[80:], y[80:]))
    assert ckpt.metadata["epochs_run"] == 3
    assert len(ckpt.metadata["history"]) == 3
    assert "final_test_accuracy" in ckpt.metadata
    assert all("test_accuracy" in rec for rec in ckpt.metadata["history"])


def test_early_stop_on_plateau():
    x, y = make_blobs_unit(seed=11)
    cfg = VictimConfig(kind="ann", hidden_dim=32, epochs=50, batch_size=32,
                       early_stop_patience=2, seed=2)
    ckpt = train_victim(cfg, (x[:80], y[:80]), (x[80:], y[80:]))
    assert ckpt.metadata["epochs_run"] < 50


def test_victim_config_validation():
    with pytest.raises(ConfigError):
        VictimConfig(kind="cnn")
    with pytest.raises(ConfigError):
        VictimConfig(hidden_dim=0)
    with pytest.raises(ConfigError):
        VictimConfig(kind="snn", steps=0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_bytes(tmp_path):
    x, y = make_blobs_unit(seed=12)
    ann = AnnClassifier(hidden_dim=8, epochs=1, seed=0).fit(x, y)
    ckpt = checkpoint_from_estimator(ann, {"note": 1})
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(ckpt, str(p1))
    loaded = load_checkpoint(str(p1))
    save_checkpoint(loaded, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_preserves_accuracy(tmp_path):
    x, y = make_blobs_unit(seed=13, d=6, n_classes=3)
    snn = SnnClassifier(hidden_dim=10, epochs=2, steps=5, seed=1).fit(x, y)
    path = str(tmp_path / "snn.ckpt")
    save_checkpoint(checkpoint_from_estimator(snn), path)
    clone = load_victim(path)
    assert evaluate_accuracy(clone, (x, y)) == evaluate_accuracy(snn, (x, y))
    assert np.array_equal(clone.predict_proba(x[:5]), snn.predict_proba(x[:5]))


def test_checkpoint_truncation_is_data_error(tmp_path):
    x, y = make_blobs_unit(seed=14)
    ann = AnnClassifier(hidden_dim=8, epochs=1, seed=0).fit(x, y)
    path = str(tmp_path / "trunc.ckpt")
    save_checkpoint(checkpoint_from_estimator(ann), path)
    blob = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(blob[: len(blob) // 2])
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_checkpoint_bad_magic_is_data_error(tmp_path):
    path = str(tmp_path / "junk.ckpt")
    with open(path, "wb") as fh:
        fh.write(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_checkpoint_rejects_future_version(tmp_path):
    import json
    x, y = make_blobs_unit(seed=15)
    ann = AnnClassifier(hidden_dim=8, epochs=1, seed=0).fit(x, y)
    path = str(tmp_path / "v2.ckpt")
    save_checkpoint(checkpoint_from_estimator(ann), path)
    blob = bytearray(open(path, "rb").read())
    header_len = int.from_bytes(blob[8:12], "little")
    header = json.loads(blob[12:12 + header_len].decode())
    header["format_version"] = 99
    new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    rebuilt = blob[:8] + len(new_header).to_bytes(4, "little") + new_header \
        + blob[12 + header_len:]
    with open(path, "wb") as fh:
        fh.write(rebuilt)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_estimator_round_trip_kind_mismatch():
    from sib import Checkpoint
    with pytest.raises(DataError):
        estimator_from_checkpoint(Checkpoint(kind="gamin", params={}, arrays={}))
