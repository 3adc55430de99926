import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from settlement_ccf.cli import main
from settlement_ccf.modelfile import deserialize_forest
from settlement_ccf.raster import (
    Label,
    load_class_map,
    load_mask,
    load_raster,
    make_raster,
    save_raster,
)

GALLERY = Path(__file__).resolve().parents[1] / "gallery" / "configs"

SMALL_SCENE = """\
scene:
  width: 64
  height: 64
  separation: 6
  label_fraction: 0.3
  seed: {seed}
{extra}"""


def write_scene(tmp_path, name="scene", seed=0, extra=""):
    spec = tmp_path / f"{name}.yaml"
    spec.write_text(SMALL_SCENE.format(seed=seed, extra=extra))
    out = tmp_path / name
    assert main(["synth", "--config", str(spec), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    scene = write_scene(tmp)
    out = tmp / "model"
    code = main(["train", "--config", str(scene / "dataset.yaml"), "--out", str(out),
                 "--trees", "5"])
    assert code == 0
    return tmp, scene, out


def test_train_outputs(trained):
    _, _, out = trained
    for name in ("model.json", "report.json", "report.csv", "manifest.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["pixel_accuracy"] >= 0.99
    assert report["manifest"]["seed"] == 0
    assert report["manifest"]["config"]["forest"]["n_trees"] == 5
    forest = deserialize_forest(out / "model.json")
    assert forest.metadata["manifest"]["inputs"]["mask"]["sha256"]


def test_predict_matches_labels(trained, tmp_path):
    _, scene, out = trained
    target = tmp_path / "map.pgm"
    assert main(["predict", "--model", str(out / "model.json"),
                 "--raster", str(scene / "raster"), "--out", str(target)]) == 0
    class_map = load_class_map(target)
    mask = load_mask(scene / "mask.pgm").labels
    labeled = mask != Label.UNLABELED
    assert np.mean(class_map.classes[labeled] == mask[labeled]) >= 0.99
    assert class_map.probabilities is not None
    assert (tmp_path / "map.pgm.manifest.json").exists()


def test_train_is_reproducible(trained, tmp_path):
    _, scene, out = trained
    again = tmp_path / "again"
    assert main(["train", "--config", str(scene / "dataset.yaml"), "--out", str(again),
                 "--trees", "5", "--threads", "2"]) == 0
    assert (again / "model.json").read_bytes() == (out / "model.json").read_bytes()
    assert (again / "report.csv").read_bytes() == (out / "report.csv").read_bytes()


def test_missing_mask_exit_2(trained, tmp_path, caplog):
    _, scene, _ = trained
    cfg = yaml.safe_load((scene / "dataset.yaml").read_text())
    cfg["mask"] = "nowhere.pgm"
    path = scene / "broken.yaml"
    path.write_text(yaml.safe_dump(cfg))
    with caplog.at_level(logging.ERROR):
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "[load_mask]" in caplog.text


def test_bad_config_exit_2(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("region: x\nraster: r\n")
    assert main(["train", "--config", str(path)]) == 2
    path.write_text("region: x\nraster: r\nmask: m\nforest: {n_trees: 0}\n")
    assert main(["train", "--config", str(path)]) == 2


def test_wrong_band_count_exit_3(trained, tmp_path):
    _, _, out = trained
    stack = np.full((3, 8, 8), 0.1, dtype=np.float32)
    save_raster(make_raster(stack, ["2", "3", "4"]), tmp_path / "r")
    assert main(["predict", "--model", str(out / "model.json"),
                 "--raster", str(tmp_path / "r"), "--out", str(tmp_path / "m.pgm")]) == 3


def test_all_nodata_raster(trained, tmp_path, caplog):
    _, scene, out = trained
    bands = load_raster(scene / "raster").band_ids
    stack = np.full((len(bands), 6, 7), -9999.0, dtype=np.float32)
    save_raster(make_raster(stack, bands, nodata_value=-9999.0), tmp_path / "r")
    with caplog.at_level(logging.WARNING):
        assert main(["predict", "--model", str(out / "model.json"),
                     "--raster", str(tmp_path / "r"), "--out", str(tmp_path / "m.pgm")]) == 0
    class_map = load_class_map(tmp_path / "m.pgm")
    assert (class_map.classes == Label.ENVIRONMENT).all()
    assert class_map.nodata_count == 42
    assert "nodata" in caplog.text


def test_synth_rejects_zero_label_fraction(tmp_path):
    spec = tmp_path / "s.yaml"
    spec.write_text("scene:\n  label_fraction: 0\n")
    assert main(["synth", "--config", str(spec), "--out", str(tmp_path / "o")]) == 2


def test_synth_same_seed_same_files(tmp_path):
    a = write_scene(tmp_path, "a", seed=3)
    b = write_scene(tmp_path, "b", seed=3)
    for rel in ("raster/header.json", "raster/bands.bin", "mask.pgm"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_bundled_spec_loads(tmp_path):
    out = tmp_path / "bundled"
    assert main(["synth", "--config", str(GALLERY / "scene.yaml"), "--out", str(out),
                 "--seed", "4"]) == 0
    raster = load_raster(out / "raster")
    mask = load_mask(out / "mask.pgm")
    assert (raster.height, raster.width) == mask.labels.shape == (128, 128)
    assert yaml.safe_load((out / "dataset.yaml").read_text())["seed"] == 4


def test_crosseval_single_cell(trained, tmp_path):
    _, scene, out = trained
    target = tmp_path / "x"
    assert main(["crosseval", "--models", str(out / "model.json"),
                 "--datasets", str(scene / "dataset.yaml"), "--out", str(target)]) == 0
    rows = (target / "accuracy_table.csv").read_text().splitlines()
    assert rows[0] == "model,row,scene"
    assert len(rows) == 3
    tables = json.loads((target / "tables.json").read_text())
    assert len(tables["iou"]) == 4


def test_crosseval_partial_failure(trained, tmp_path, caplog):
    tmp, scene, out = trained
    other = write_scene(tmp_path, "other", seed=5)
    broken = tmp_path / "broken.yaml"
    broken.write_text("region: broken\nraster: missing\nmask: missing.pgm\n")
    target = tmp_path / "x"
    with caplog.at_level(logging.WARNING):
        code = main(["crosseval", "--models", str(out / "model.json"),
                     "--datasets", str(scene / "dataset.yaml"), str(broken),
                     str(other / "dataset.yaml"), "--out", str(target)])
    assert code == 0
    rows = [line.split(",") for line in (target / "accuracy_table.csv").read_text().splitlines()]
    assert rows[0] == ["model", "row", "scene", "broken", "other"]
    assert all(r[3] == "ERROR" and r[2] != "ERROR" and r[4] != "ERROR" for r in rows[1:])
    assert "could not be evaluated" in caplog.text


def test_crosseval_nothing_evaluable(tmp_path):
    broken = tmp_path / "broken.yaml"
    broken.write_text("region: broken\nraster: missing\nmask: missing.pgm\n")
    assert main(["crosseval", "--models", str(tmp_path / "none.json"),
                 "--datasets", str(broken), "--out", str(tmp_path / "x")]) == 2


def test_shifted_regions_crosseval(tmp_path):
    models, datasets = [], []
    for name in ("region_north", "region_south"):
        scene = tmp_path / name
        assert main(["synth", "--config", str(GALLERY / f"{name}.yaml"),
                     "--out", str(scene)]) == 0
        assert main(["train", "--config", str(scene / "dataset.yaml"),
                     "--out", str(tmp_path / f"{name}_model")]) == 0
        models.append(str(tmp_path / f"{name}_model" / "model.json"))
        datasets.append(str(scene / "dataset.yaml"))
    assert main(["crosseval", "--models", *models, "--datasets", *datasets,
                 "--out", str(tmp_path / "x")]) == 0
    cells = json.loads((tmp_path / "x" / "crosseval.json").read_text())["cells"]
    acc = {(c["train_region"], c["test_region"]): c["pixel_accuracy"] for c in cells}
    for home, away in (("region_north", "region_south"), ("region_south", "region_north")):
        assert acc[(home, home)] > acc[(home, away)]


def test_module_entry_point(tmp_path):
    result = subprocess.run([sys.executable, "-m", "settlement_ccf", "--version"],
                            capture_output=True, text=True)
    assert result.returncode == 0 and result.stdout.strip()
