import json
import struct

import numpy as np
import pytest

from adare.adastat import ConfusionMatrix
from adare.dataio import (
    Dataset, SyntheticSpec, child_rng, dumps_artifact, gen_synthetic, load_artifact, load_idx, loads_artifact,
    save_artifact, split, write_idx,
)
from adare.netcore import init_net, predict
from adare.nullmodel import EmConfig, fit_null_models


def write_raw_idx(tmp_path, pixels, labels, count=None, rows=2, cols=2, magic=0x803):
    n = len(labels) if count is None else count
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(struct.pack(">4I", magic, n, rows, cols) + bytes(pixels))
    lab.write_bytes(struct.pack(">2I", 0x801, len(labels)) + bytes(labels))
    return img, lab


def test_idx_parse(tmp_path):
    pixels = [0, 255, 128, 3] * 4
    img, lab = write_raw_idx(tmp_path, pixels, [0, 1, 2, 1])
    data = load_idx(img, lab)
    assert len(data) == 4 and data.dim == 4 and data.n_classes == 3
    assert data.X[0, 1] == 1.0
    assert data.X[0, 0] == 0.0
    np.testing.assert_array_equal(data.y, [0, 1, 2, 1])


def test_idx_truncated_payload_names_sizes(tmp_path):
    img, lab = write_raw_idx(tmp_path, [1] * 15, [0, 1, 2, 1])
    with pytest.raises(ValueError, match="expected 16 .*found 15"):
        load_idx(img, lab)


def test_idx_bad_magic_and_count_mismatch(tmp_path):
    img, lab = write_raw_idx(tmp_path, [1] * 16, [0, 1, 2, 1], magic=0x802)
    with pytest.raises(ValueError, match="magic"):
        load_idx(img, lab)
    img, lab = write_raw_idx(tmp_path, [1] * 12, [0, 1, 2, 1], count=3)
    with pytest.raises(ValueError, match="count"):
        load_idx(img, lab)


def test_idx_writer_round_trip(tmp_path):
    images = np.arange(5 * 3 * 2, dtype=np.uint8).reshape(5, 3, 2) * 8
    write_idx(tmp_path / "a", tmp_path / "b", images, [4, 3, 2, 1, 0])
    data = load_idx(tmp_path / "a", tmp_path / "b", n_classes=5)
    np.testing.assert_array_equal(data.X, images.reshape(5, 6) / 255.0)


def test_synthetic_contracts():
    means = np.array([[0.2, 0.4], [0.6, 0.8]])
    flat = gen_synthetic(SyntheticSpec(n_classes=2, dim=2, spread=0.0, samples_per_class=3, means=means))
    np.testing.assert_array_equal(flat.X, np.repeat(means, 3, axis=0))
    data = gen_synthetic(SyntheticSpec(n_classes=4, dim=5, samples_per_class=200, seed=3))
    assert len(data) == 800
    np.testing.assert_array_equal(data.class_counts(), [200] * 4)
    assert data.X.min() >= 0 and data.X.max() <= 1
    again = gen_synthetic(SyntheticSpec(n_classes=4, dim=5, samples_per_class=200, seed=3))
    assert data.X.tobytes() == again.X.tobytes()
    with pytest.raises(ValueError):
        SyntheticSpec(spread=-1.0)


def test_split_contracts():
    data = gen_synthetic(SyntheticSpec(n_classes=3, dim=2, samples_per_class=37, seed=1))
    tr, ho, te = split(data, (1, 0, 0), seed=0)
    assert len(tr) == len(data) and len(ho) == 0 and len(te) == 0
    parts = split(data, (0.6, 0.2, 0.2), seed=4)
    assert sum(len(p) for p in parts) == len(data)
    for p, frac in zip(parts, (0.6, 0.2, 0.2)):
        assert np.all(np.abs(p.class_counts() - frac * 37) <= 1)
    joined = np.sort(np.concatenate([p.X[:, 0] for p in parts]))
    np.testing.assert_array_equal(joined, np.sort(data.X[:, 0]))
    with pytest.raises(ValueError):
        split(data, (0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        split(data.subset(np.array([0, 1, 40])), (0.4, 0.3, 0.3))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.array([[1.2]]), np.array([0]), 2)
    with pytest.raises(ValueError):
        Dataset(np.array([[0.2]]), np.array([2]), 2)


def test_child_streams_are_independent_and_reproducible():
    a = child_rng(7, "data").random(4)
    assert np.array_equal(a, child_rng(7, "data").random(4))
    assert not np.array_equal(a, child_rng(7, "split").random(4))
    assert not np.array_equal(a, child_rng(8, "data").random(4))


def test_net_round_trip(tmp_path):
    net = init_net([5, 4, 3, 2], ["relu", "sigmoid"], seed=6, init_scale=2.0)
    path = save_artifact(tmp_path / "net.json", "net", net)
    back = load_artifact(path, "net")
    X = np.random.default_rng(0).uniform(size=(100, 5))
    np.testing.assert_array_equal(predict(back, X), predict(net, X))
    for la, lb in zip(net.layers, back.layers):
        assert la.weights.tobytes() == lb.weights.tobytes()


def test_null_set_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    X = np.concatenate([np.clip(rng.normal(0.3 + 0.3 * c, 0.05, (25, 3)), 0, 1) for c in range(2)])
    data = Dataset(X, np.repeat([0, 1], 25), 2)
    net = init_net([3, 3, 2], "relu", seed=0)
    nulls = fit_null_models(net, data, [1], cfg=EmConfig(components=(1, 2), restarts=1))
    back = load_artifact(save_artifact(tmp_path / "n.json", "nulls", nulls), "nulls")
    Z = rng.uniform(0, 1, (100, 3))
    assert back.pairs == nulls.pairs and back.domains == nulls.domains
    np.testing.assert_array_equal(back.pair_log_densities(1, Z), nulls.pair_log_densities(1, Z))


def test_confusion_and_experiment_round_trip():
    conf = ConfusionMatrix(np.array([[0.75, 0.1], [0.25, 0.9]]), 0.5)
    back = loads_artifact(dumps_artifact("confusion", conf), "confusion")
    np.testing.assert_array_equal(back.matrix, conf.matrix)
    assert back.alpha == 0.5
    body = {"rows": [[1, 0.1 + 0.2]], "note": "x"}
    assert loads_artifact(dumps_artifact("experiment", body)) == body


def test_corrupted_artifacts_are_rejected(tmp_path):
    text = dumps_artifact("confusion", ConfusionMatrix(np.eye(2)))
    doc = json.loads(text)
    doc["version"] = 99
    with pytest.raises(ValueError, match="version"):
        loads_artifact(json.dumps(doc))
    with pytest.raises(ValueError):
        loads_artifact(text, "net")
    with pytest.raises(ValueError):
        loads_artifact(text[: len(text) // 2])
    with pytest.raises(ValueError):
        loads_artifact(json.dumps({"format": "adare", "kind": "net", "version": 1, "body": {"layers": "bad"}}))


def test_save_is_atomic_on_failure(tmp_path):
    path = tmp_path / "c.json"
    save_artifact(path, "confusion", ConfusionMatrix(np.eye(2)))
    before = path.read_bytes()
    with pytest.raises(ValueError):
        save_artifact(path, "unknown-kind", {})
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["c.json"]
