import json

import numpy as np
import pytest

from settlement_ccf.errors import DimensionMismatchError, ModelFormatError
from settlement_ccf.forest import ForestConfig, train_forest
from settlement_ccf.modelfile import (
    canonical_json,
    deserialize_forest,
    dumps_forest,
    loads_forest,
    serialize_forest,
)
from settlement_ccf.sampling import PixelDataset, fit_standardizer, apply_standardizer


@pytest.fixture(scope="module")
def forest():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, size=200)
    X = rng.normal(size=(200, 4)) + y[:, None]
    data = PixelDataset(X, y, ("2", "3", "4", "8"))
    std = fit_standardizer(data)
    return train_forest(apply_standardizer(std, data), ForestConfig(n_trees=5, seed=11), std)


def test_round_trip_predictions(forest, tmp_path):
    serialize_forest(forest, tmp_path / "m.json")
    back = deserialize_forest(tmp_path / "m.json")
    X = np.random.default_rng(0).normal(size=(1000, 4)) * 2
    assert forest.predict_proba(X).tobytes() == back.predict_proba(X).tobytes()
    assert back.band_ids == forest.band_ids
    assert back.config == forest.config


def test_reserialization_is_byte_identical(forest, tmp_path):
    serialize_forest(forest, tmp_path / "a.json")
    serialize_forest(deserialize_forest(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_two_training_runs_identical(tmp_path):
    rng = np.random.default_rng(8)
    y = rng.integers(0, 2, size=100)
    data = PixelDataset(rng.normal(size=(100, 3)) + y[:, None], y)
    a = dumps_forest(train_forest(data, ForestConfig(n_trees=3, seed=1)))
    b = dumps_forest(train_forest(data, ForestConfig(n_trees=3, seed=1)))
    c = dumps_forest(train_forest(data, ForestConfig(n_trees=3, seed=2)))
    assert a == b
    assert a != c


def test_document_layout(forest):
    text = dumps_forest(forest)
    doc = json.loads(text)
    assert list(doc) == sorted(doc)
    assert doc["format_version"] == 1
    assert len(doc["trees"]) == 5
    assert doc["bands"] == ["2", "3", "4", "8"]
    node = next(n for n in doc["trees"][0]["nodes"] if "direction" in n)
    assert set(node) == {"direction", "left", "right", "threshold"}


def test_float_formatting():
    assert canonical_json({"b": 0.1, "a": [1, 2.5]}) == '{"a":[1,2.5],"b":0.10000000000000001}'
    with pytest.raises(ValueError):
        canonical_json([float("nan")])


def test_tampered_direction_length(forest):
    doc = json.loads(dumps_forest(forest))
    node = next(n for n in doc["trees"][0]["nodes"] if "direction" in n)
    node["direction"].append(0.0)
    with pytest.raises(DimensionMismatchError):
        loads_forest(json.dumps(doc))


def test_version_mismatch(forest):
    doc = json.loads(dumps_forest(forest))
    doc["format_version"] = 2
    with pytest.raises(ModelFormatError, match="format_version"):
        loads_forest(json.dumps(doc))


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("config"),
    lambda d: d["trees"].pop(),
    lambda d: d["trees"][0]["nodes"][0].update(left=0),
    lambda d: d["trees"][0]["nodes"].append({"class_counts": [1, 0]}),
    lambda d: d["trees"][0]["nodes"][0].update(direction=[2.0, 0.0, 0.0, 0.0]),
])
def test_malformed_documents(forest, mutate):
    doc = json.loads(dumps_forest(forest))
    mutate(doc)
    with pytest.raises(ModelFormatError):
        loads_forest(json.dumps(doc))


def test_not_json():
    with pytest.raises(ModelFormatError):
        loads_forest("{nope")
