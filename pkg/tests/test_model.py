"""Classifier module tests: geometry, training behavior, model files.

The parameter-count oracle is the closed form
  conv1 7*(3*3*3+1) + conv2 12*(7*2*2+1) + dense (flatten*500+500) + output (500*2+2)
with flatten = 12 * (floor((p-2)/2) - 1)^2, evaluated here independently
of the network code.
"""

import numpy as np
import pytest

from pathoscope.errors import (
    BadMagicError,
    ChecksumMismatchError,
    DivergedLossError,
    EmptyTrainingError,
    PatchTooSmallError,
    ShapeMismatchError,
    SingleClassDatasetError,
    TruncatedFileError,
)
from pathoscope.model import (
    NetworkConfig,
    TrainConfig,
    build_network,
    feature_geometry,
    load_model,
    patches_to_arrays,
    predict_batch,
    predict_patch,
    save_loss_log,
    save_model,
    train,
)
from pathoscope.patches import DatasetSplit, Patch


def closed_form_parameter_count(p):
    flatten = 12 * ((p - 2) // 2 - 1) ** 2
    return (7 * (3 * 3 * 3 + 1)
            + 12 * (7 * 2 * 2 + 1)
            + (flatten * 500 + 500)
            + (500 * 2 + 2))


# ---------------------------------------------------------------------------
# architecture geometry
# ---------------------------------------------------------------------------

def test_geometry_at_32():
    stages = feature_geometry(NetworkConfig(patch_size=32))
    shapes = dict(stages)
    assert shapes["conv 7@3x3"] == (7, 30, 30)
    assert shapes["maxpool /2"] == (7, 15, 15)
    assert shapes["conv 12@2x2"] == (12, 14, 14)
    assert 12 * 14 * 14 == 2352


def test_parameter_count_matches_closed_form():
    for p in (8, 16, 24, 32, 48):
        model = build_network(patch_size=p, seed=0)
        assert model.network.parameter_count() == closed_form_parameter_count(p)


def test_conv1_parameter_count():
    model = build_network(patch_size=32, seed=0)
    conv1 = [(layer, name, arr) for layer, name, arr in model.network.parameters()
             if layer.name == "conv1"]
    assert sum(arr.size for _, _, arr in conv1) == 196


def test_patch_too_small():
    with pytest.raises(PatchTooSmallError):
        build_network(patch_size=7, seed=0)
    with pytest.raises(PatchTooSmallError):
        NetworkConfig(patch_size=5)


def test_same_seed_same_weights():
    a = build_network(patch_size=16, seed=3)
    b = build_network(patch_size=16, seed=3)
    for (_, _, wa), (_, _, wb) in zip(a.network.parameters(), b.network.parameters()):
        assert np.array_equal(wa, wb)
    c = build_network(patch_size=16, seed=4)
    assert not all(
        np.array_equal(wa, wc)
        for (_, _, wa), (_, _, wc) in zip(a.network.parameters(), c.network.parameters())
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

P = 8  # smallest valid patch keeps these tests fast


def _toy_patch(label, seed):
    rng = np.random.default_rng(seed)
    pixels = rng.uniform(0.7, 1.0, size=(P, P, 3)).astype(np.float32)
    if label == 1:
        pixels[2:6, 2:6, :] *= 0.1  # dark blob on bright background
    return Patch(pixels=pixels, label=label, source_image_id=f"toy-{seed}",
                 origin=(0, 0))


def _toy_split(n_pos=10, n_neg=10):
    train = [_toy_patch(1, s) for s in range(n_pos)] + \
            [_toy_patch(0, 100 + s) for s in range(n_neg)]
    test = [_toy_patch(1, 50), _toy_patch(0, 150)]
    return DatasetSplit(train=train, test=test, seed=0)


def test_patches_to_arrays_layout():
    split = _toy_split(2, 2)
    X, y = patches_to_arrays(split.train)
    assert X.shape == (4, 3, P, P) and X.dtype == np.float32
    assert y.tolist() == [1, 1, 0, 0]
    # channel-first transpose preserves values
    assert np.array_equal(X[0, 0], split.train[0].pixels[:, :, 0])


def test_train_rejects_empty_and_single_class():
    model = build_network(patch_size=P, seed=0)
    cfg = TrainConfig(epochs=1, seed=0)
    with pytest.raises(EmptyTrainingError):
        train(model, DatasetSplit(train=[], test=[], seed=0), cfg)
    single = DatasetSplit(train=[_toy_patch(1, 1), _toy_patch(1, 2)],
                          test=[], seed=0)
    with pytest.raises(SingleClassDatasetError):
        train(model, single, cfg)


def test_zero_learning_rate_leaves_weights_unchanged():
    model = build_network(patch_size=P, seed=1)
    before = [arr.copy() for _, _, arr in model.network.parameters()]
    out = train(model, _toy_split(), TrainConfig(epochs=1, learning_rate=0.0, seed=0))
    for (_, _, arr), orig in zip(out.network.parameters(), before):
        assert np.array_equal(arr, orig)


def test_train_does_not_mutate_input_model():
    model = build_network(patch_size=P, seed=1)
    before = [arr.copy() for _, _, arr in model.network.parameters()]
    train(model, _toy_split(), TrainConfig(epochs=2, seed=0))
    for (_, _, arr), orig in zip(model.network.parameters(), before):
        assert np.array_equal(arr, orig)


def test_loss_decreases_and_history_length():
    model = build_network(patch_size=P, seed=2)
    cfg = TrainConfig(epochs=20, seed=5)
    out = train(model, _toy_split(), cfg)
    assert len(out.training_history) == 20
    assert out.training_history[-1] <= out.training_history[0]
    assert all(np.isfinite(v) for v in out.training_history)


def test_overfit_small_dataset_to_perfect_accuracy():
    split = _toy_split(10, 10)
    model = build_network(patch_size=P, seed=0)
    out = train(model, split, TrainConfig(epochs=200, seed=0))
    pixels = np.stack([p.pixels for p in split.train])
    probs = predict_batch(out, pixels)
    labels = np.array([p.label for p in split.train])
    assert np.array_equal(probs > 0.5, labels == 1)
    # a memorized positive is confidently positive
    assert probs[0] > 0.9


def test_progress_sink_stops_early():
    model = build_network(patch_size=P, seed=0)
    seen = []

    def sink(epoch, mean_loss):
        seen.append((epoch, mean_loss))
        return epoch >= 3

    out = train(model, _toy_split(), TrainConfig(epochs=50, seed=0), progress_sink=sink)
    assert [e for e, _ in seen] == [1, 2, 3]
    assert len(out.training_history) == 3


def test_diverged_loss_detected():
    model = build_network(patch_size=P, seed=0)
    cfg = TrainConfig(epochs=50, learning_rate=1e12, seed=0)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(DivergedLossError):
        train(model, _toy_split(), cfg)


def test_training_deterministic_bytes(tmp_path):
    split = _toy_split()
    cfg = TrainConfig(epochs=5, seed=9)
    a = train(build_network(patch_size=P, seed=4), split, cfg)
    b = train(build_network(patch_size=P, seed=4), split, cfg)
    save_model(a, tmp_path / "a.pscn")
    save_model(b, tmp_path / "b.pscn")
    assert (tmp_path / "a.pscn").read_bytes() == (tmp_path / "b.pscn").read_bytes()


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def test_untrained_prediction_valid_probability():
    model = build_network(patch_size=P, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        prob = predict_patch(model, rng.random((P, P, 3)).astype(np.float32))
        assert 0.0 <= prob <= 1.0 and np.isfinite(prob)


def test_predict_shape_mismatch():
    model = build_network(patch_size=P, seed=0)
    with pytest.raises(ShapeMismatchError):
        predict_patch(model, np.zeros((P + 1, P + 1, 3), np.float32))
    with pytest.raises(ShapeMismatchError):
        predict_batch(model, np.zeros((2, P, P, 1), np.float32))


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _trained(tmp_path=None):
    return train(build_network(patch_size=P, seed=0), _toy_split(),
                 TrainConfig(epochs=3, seed=1))


def test_save_load_save_identical_bytes(tmp_path):
    model = _trained()
    first = tmp_path / "m1.pscn"
    second = tmp_path / "m2.pscn"
    save_model(model, first)
    save_model(load_model(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_round_trip_preserves_everything(tmp_path):
    model = _trained()
    path = tmp_path / "m.pscn"
    save_model(model, path)
    back = load_model(path)
    assert back.config == model.config
    assert back.training_history == model.training_history
    assert back.provenance == model.provenance
    for (_, _, a), (_, _, b) in zip(model.network.parameters(),
                                    back.network.parameters()):
        assert np.array_equal(a, b)


def test_prediction_invariant_to_round_trip(tmp_path):
    model = _trained()
    path = tmp_path / "m.pscn"
    save_model(model, path)
    back = load_model(path)
    rng = np.random.default_rng(8)
    pixels = rng.random((6, P, P, 3)).astype(np.float32)
    assert np.array_equal(predict_batch(model, pixels), predict_batch(back, pixels))


def test_model_file_bad_magic(tmp_path):
    path = tmp_path / "m.pscn"
    path.write_bytes(b"WHAT" + b"\x00" * 32)
    with pytest.raises(BadMagicError):
        load_model(path)


def test_model_file_truncation_all_prefixes(tmp_path):
    model = _trained()
    path = tmp_path / "m.pscn"
    save_model(model, path)
    raw = path.read_bytes()
    bad = tmp_path / "cut.pscn"
    for cut in (3, 6, 10, 12 + 5, len(raw) - 5):
        bad.write_bytes(raw[:cut])
        with pytest.raises(TruncatedFileError):
            load_model(bad)


def test_model_file_checksum(tmp_path):
    model = _trained()
    path = tmp_path / "m.pscn"
    save_model(model, path)
    raw = bytearray(path.read_bytes())
    raw[-50] ^= 0x01  # flip one bit in the weight blob
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatchError):
        load_model(path)


def test_loss_log_csv(tmp_path):
    path = tmp_path / "loss.csv"
    save_loss_log([0.7, 0.25, 0.125], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,mean_loss"
    assert lines[1].startswith("1,") and lines[3].startswith("3,")
    assert float(lines[2].split(",")[1]) == 0.25
