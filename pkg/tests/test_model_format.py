import json
import struct

import numpy as np
import pytest

from spectramin.datasets import pair_same_modality
from spectramin.errors import ModelFormatError
from spectramin.learners import (
    CnnArchitecture, Conv, Dense, MaxPool, TrainConfig, load_model, save_model,
    train_cnn, train_extra_trees, train_knn_weighted, train_linear_svm, train_two_stream_cnn,
)
from spectramin.learners.base import MAGIC, dumps_model, loads_model
from spectramin.learners.cnn import EnsembleModel


def small_arch(n_classes, length):
    return CnnArchitecture((Conv(2, 5), MaxPool(2), Dense(n_classes, "softmax")), length)


def trained_models(blobs):
    cfg = TrainConfig(epochs=2, ema_decay=0.5, seed=0)
    cnn = train_cnn(blobs, small_arch(3, 32), cfg)
    pairs = pair_same_modality(blobs, seed=0, cap=5)
    two = train_two_stream_cnn(pairs, small_arch(3, 32), small_arch(3, 32), cfg, blobs.species)
    return {
        "knn": train_knn_weighted(blobs, 3),
        "trees": train_extra_trees(blobs, n_trees=4, seed=1),
        "svm": train_linear_svm(blobs, epochs=20),
        "cnn": cnn,
        "ensemble": EnsembleModel((cnn, train_knn_weighted(blobs, 2)), blobs.species, blobs.grid, blobs.kind),
        "two_stream": two,
    }


def test_roundtrip_bit_identical(blobs, tmp_path):
    x = blobs.values[:6]
    for name, model in trained_models(blobs).items():
        path = tmp_path / f"{name}.spm"
        save_model(model, path)
        back = load_model(path)
        assert type(back) is type(model)
        assert back.classes == model.classes
        if name == "two_stream":
            x2 = np.concatenate([x, x], axis=1)
            assert np.array_equal(back.predict_proba(x2), model.predict_proba(x2))
        else:
            assert np.array_equal(back.predict_proba(x), model.predict_proba(x)), name
        assert dumps_model(back) == dumps_model(model)


def test_file_starts_with_magic(blobs):
    data = dumps_model(train_knn_weighted(blobs, 3))
    assert data[:8] == MAGIC
    (n,) = struct.unpack_from("<I", data, 8)
    desc = json.loads(data[12: 12 + n])
    assert desc["version"] == 1 and desc["model_type"] == "knn"
    assert {e["dtype"] for e in desc["arrays"]} <= {"<f4", "<i4"}


def _rewrite_descriptor(data, mutate):
    (n,) = struct.unpack_from("<I", data, 8)
    desc = json.loads(data[12: 12 + n])
    mutate(desc)
    new = json.dumps(desc).encode()
    return MAGIC + struct.pack("<I", len(new)) + new + data[12 + n:]


def test_format_errors(blobs):
    data = dumps_model(train_knn_weighted(blobs, 3))
    with pytest.raises(ModelFormatError):
        loads_model(b"NOTMODEL" + data[8:])
    with pytest.raises(ModelFormatError):
        loads_model(data[:-5])
    with pytest.raises(ModelFormatError):
        loads_model(data[:20])
    with pytest.raises(ModelFormatError):
        loads_model(_rewrite_descriptor(data, lambda d: d.update(version=2)))
    with pytest.raises(ModelFormatError):
        loads_model(_rewrite_descriptor(data, lambda d: d.pop("version")))
    with pytest.raises(ModelFormatError):
        loads_model(_rewrite_descriptor(data, lambda d: d.update(model_type="nope")))
    with pytest.raises(ModelFormatError):
        loads_model(_rewrite_descriptor(data, lambda d: d["arrays"][0].update(dtype="<f8")))


def test_save_is_atomic_on_failure(blobs, tmp_path, monkeypatch):
    path = tmp_path / "m.spm"
    save_model(train_knn_weighted(blobs, 3), path)
    before = path.read_bytes()
    import spectramin.learners.base as base

    def boom(model):
        raise RuntimeError("fail")

    monkeypatch.setattr(base, "dumps_model", boom)
    with pytest.raises(RuntimeError):
        base.save_model(train_knn_weighted(blobs, 1), path)
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["m.spm"]
