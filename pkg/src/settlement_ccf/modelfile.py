"""Canonical text serialization of trained forests.

The model file is UTF-8 JSON with sorted keys, no insignificant whitespace,
and every float written with 17 significant digits (``format(x, ".17g")``),
which round-trips IEEE doubles exactly. Two serializations of the same
forest are therefore byte-identical. Layout (format_version 1)::

    {
      "bands": ["2", "3", ...],
      "config": {"max_depth": null, "min_node_size": 2, "n_trees": 10,
                 "ridge": null, "seed": 0},
      "format_version": 1,
      "metadata": {...},                      # free-form, e.g. run manifest
      "single_class": false,
      "standardizer": {"means": [...], "stds": [...], "zero_variance": [...]},
      "trees": [
        {"root": 0, "nodes": [
          {"direction": [...], "left": 1, "right": 2, "threshold": 0.25},
          {"class_counts": [8, 0]},
          ...
        ]}
      ]
    }

Internal nodes carry a unit-norm ``direction`` and route ``x @ direction <=
threshold`` to ``left``. Leaves carry ``class_counts`` as
``[environment, informal]``.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, ModelFormatError
from .forest import FORMAT_VERSION, N_CLASS, CcTree, Forest, ForestConfig
from .sampling import Standardizer


def _encode(value) -> str:
    if isinstance(value, dict):
        items = sorted(value.items())
        return "{" + ",".join(json.dumps(str(k)) + ":" + _encode(v) for k, v in items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in value) + "]"
    if isinstance(value, np.ndarray):
        return _encode(value.tolist())
    if value is None or isinstance(value, (bool, np.bool_)):
        return json.dumps(None if value is None else bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("non-finite float in model document")
        return format(value, ".17g")
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    raise TypeError(f"cannot encode {type(value).__name__}")


def canonical_json(doc) -> str:
    """Sorted-key compact JSON with 17-significant-digit floats."""
    return _encode(doc)


def _tree_doc(tree: CcTree) -> dict:
    nodes = []
    for i in range(tree.n_nodes):
        if tree.left[i] < 0:
            nodes.append({"class_counts": tree.counts[i].tolist()})
        else:
            nodes.append({
                "direction": [float(v) for v in tree.directions[i]],
                "left": int(tree.left[i]),
                "right": int(tree.right[i]),
                "threshold": float(tree.thresholds[i]),
            })
    return {"nodes": nodes, "root": int(tree.root)}


def forest_to_document(forest: Forest) -> dict:
    cfg = forest.config
    return {
        "bands": list(forest.band_ids),
        "config": {
            "max_depth": cfg.max_depth,
            "min_node_size": cfg.min_node_size,
            "n_trees": cfg.n_trees,
            "ridge": cfg.ridge,
            "seed": cfg.seed,
        },
        "format_version": forest.format_version,
        "metadata": forest.metadata,
        "single_class": forest.single_class,
        "standardizer": {
            "means": forest.standardizer.means.tolist(),
            "stds": forest.standardizer.stds.tolist(),
            "zero_variance": forest.standardizer.zero_variance.tolist(),
        },
        "trees": [_tree_doc(t) for t in forest.trees],
    }


def dumps_forest(forest: Forest) -> str:
    return canonical_json(forest_to_document(forest)) + "\n"


def serialize_forest(forest: Forest, path: str | os.PathLike) -> None:
    Path(path).write_text(dumps_forest(forest), encoding="utf-8")


def _tree_from_doc(doc, n_features: int) -> CcTree:
    try:
        nodes = doc["nodes"]
        root = int(doc.get("root", 0))
    except (KeyError, TypeError):
        raise ModelFormatError("tree entry needs a node list") from None
    n = len(nodes)
    if n == 0 or not 0 <= root < n:
        raise ModelFormatError("tree has no valid root")
    directions = np.zeros((n, n_features))
    thresholds = np.zeros(n)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    counts = np.zeros((n, N_CLASS), dtype=np.int64)
    for i, node in enumerate(nodes):
        if "class_counts" in node:
            c = node["class_counts"]
            if len(c) != N_CLASS or any(int(v) != v or v < 0 for v in c) or sum(c) == 0:
                raise ModelFormatError(f"node {i}: invalid class_counts {c!r}")
            counts[i] = c
            continue
        try:
            direction = np.asarray(node["direction"], dtype=np.float64)
            thresholds[i] = float(node["threshold"])
            left[i], right[i] = int(node["left"]), int(node["right"])
        except (KeyError, TypeError, ValueError):
            raise ModelFormatError(f"node {i}: malformed internal node") from None
        if direction.shape != (n_features,):
            raise DimensionMismatchError(
                f"node {i}: direction has length {direction.size}, model has "
                f"{n_features} bands"
            )
        if not np.isfinite(direction).all() or abs(np.linalg.norm(direction) - 1) > 1e-9:
            raise ModelFormatError(f"node {i}: direction is not a finite unit vector")
        directions[i] = direction

    # every node reachable exactly once from the root
    seen = np.zeros(n, dtype=bool)
    stack = [root]
    while stack:
        i = stack.pop()
        if not 0 <= i < n or seen[i]:
            raise ModelFormatError("tree nodes do not form a proper binary tree")
        seen[i] = True
        if left[i] >= 0:
            stack.extend((right[i], left[i]))
    if not seen.all():
        raise ModelFormatError("tree contains unreachable nodes")
    # internal counts are the sum of their leaves
    for i in reversed(range(n)):
        if left[i] >= 0:
            counts[i] = counts[left[i]] + counts[right[i]]
    return CcTree(directions, thresholds, left, right, counts, root)


def loads_forest(text: str) -> Forest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})"
        )
    try:
        bands = tuple(str(b) for b in doc["bands"])
        cfg = doc["config"]
        config = ForestConfig(
            n_trees=int(cfg["n_trees"]),
            min_node_size=int(cfg["min_node_size"]),
            max_depth=None if cfg["max_depth"] is None else int(cfg["max_depth"]),
            ridge=None if cfg["ridge"] is None else float(cfg["ridge"]),
            seed=int(cfg["seed"]),
        )
        std = doc["standardizer"]
        standardizer = Standardizer(
            np.asarray(std["means"], dtype=np.float64),
            np.asarray(std["stds"], dtype=np.float64),
            np.asarray(std.get("zero_variance", [False] * len(bands)), dtype=bool),
        )
        tree_docs = doc["trees"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    if len(standardizer.means) != len(bands):
        raise DimensionMismatchError("standardizer length differs from band list")
    trees = [_tree_from_doc(t, len(bands)) for t in tree_docs]
    if len(trees) != config.n_trees:
        raise ModelFormatError(f"{len(trees)} trees stored, config says {config.n_trees}")
    return Forest(config, trees, standardizer, bands, version,
                  bool(doc.get("single_class", False)), dict(doc.get("metadata") or {}))


def deserialize_forest(path: str | os.PathLike) -> Forest:
    return loads_forest(Path(path).read_text(encoding="utf-8"))
