"""
Training a forest and mapping a scene
=====================================

The library version of ``settlement-ccf train`` followed by ``predict``:
sample balanced labeled pixels, standardize, grow canonical correlation trees,
score the held-out 20% and classify every pixel.
"""

# %%
from pathlib import Path

import numpy as np

from settlement_ccf.forest import ForestConfig, predict_map, train_forest
from settlement_ccf.metrics import evaluate
from settlement_ccf.modelfile import dumps_forest, loads_forest
from settlement_ccf.raster import Label
from settlement_ccf.sampling import apply_standardizer, fit_standardizer, prepare_datasets
from settlement_ccf.synth import generate_scene, load_scene_spec

CONFIGS = Path(__file__).resolve().parent / "configs"
raster, mask = generate_scene(load_scene_spec(CONFIGS / "scene.yaml"))
train, test = prepare_datasets(raster, mask, train_fraction=0.8, seed=0)
print("train classes", train.class_counts(), "test classes", test.class_counts())

# %%
# The standardizer is fitted on training rows only and travels with the model.
standardizer = fit_standardizer(train)
forest = train_forest(apply_standardizer(standardizer, train),
                      ForestConfig(n_trees=10, seed=0), standardizer)
print("nodes per tree", [t.n_nodes for t in forest.trees])

# %%
report = evaluate(forest, test, "synthetic", "synthetic")
print(f"held-out pixel accuracy {report.pixel_accuracy:.4f}, mean IoU {report.mean_iou:.4f}")
print(report.confusion.counts)

# %%
# Whole-scene prediction works on raw reflectances.
class_map = predict_map(forest, raster)
labeled = mask.labels != Label.UNLABELED
print("agreement with labels", np.mean(class_map.classes[labeled] == mask.labels[labeled]))

# %%
# Model files are canonical JSON, so a round trip reproduces the same bytes.
text = dumps_forest(forest)
print(len(text), "bytes; round trip stable:", dumps_forest(loads_forest(text)) == text)
