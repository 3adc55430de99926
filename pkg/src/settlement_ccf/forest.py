"""Canonical correlation trees and forests.

Each internal node fits CCA between a bootstrap resample of its rows and the
one-hot labels, projects *all* of its rows onto the resulting canonical
directions, and picks the (direction, threshold) pair with the largest Gini
gain. Rows with ``projection <= threshold`` go left.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .cca import compute_cca, one_hot
from .errors import BandMismatchError, DimensionMismatchError, InputError
from .raster import ClassMap, Label, MultiSpectralRaster
from .sampling import PixelDataset, Standardizer, resample_to_common_grid, select_bands

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
N_CLASS = 2
# Gains at or below this are treated as "no useful split" to absorb rounding.
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 10
    min_node_size: int = 2
    max_depth: int | None = None
    ridge: float | None = None
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) < 1:
            raise InputError("n_trees must be >= 1")
        if int(self.min_node_size) < 1:
            raise InputError("min_node_size must be >= 1")
        if self.max_depth is not None and int(self.max_depth) < 0:
            raise InputError("max_depth must be >= 0")
        if self.ridge is not None and not self.ridge > 0:
            raise InputError("ridge must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must fit in an unsigned 64-bit integer")


def gini_impurity(class_counts) -> float:
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if (counts < 0).any():
        raise InputError("class counts must be non-negative")
    if total <= 0:
        raise InputError("gini impurity of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def gini_gain(parent, left, right) -> float:
    n_left, n_right = float(np.sum(left)), float(np.sum(right))
    n = n_left + n_right
    child = 0.0
    if n_left:
        child += n_left / n * gini_impurity(left)
    if n_right:
        child += n_right / n * gini_impurity(right)
    return gini_impurity(parent) - child


@dataclass
class CcTree:
    """Array-backed binary tree; node 0 is the root, nodes are in preorder.

    Leaves have ``left == right == -1`` and carry ``counts``; internal nodes
    carry a unit-norm ``directions`` row and a ``thresholds`` entry.
    """

    directions: np.ndarray
    thresholds: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    root: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.thresholds)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def leaf_proba(self) -> np.ndarray:
        """Informal-class proportion per node (only meaningful at leaves)."""
        totals = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, self.counts[:, 1] / np.maximum(totals, 1), 0.0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X), dtype=np.int64)
        stack = [(self.root, np.arange(len(X)))]
        while stack:
            node, rows = stack.pop()
            if self.left[node] < 0:
                out[rows] = node
                continue
            proj = X[rows] @ self.directions[node]
            go_left = proj <= self.thresholds[node]
            if rows.size:
                stack.append((self.right[node], rows[~go_left]))
                stack.append((self.left[node], rows[go_left]))
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_proba()[self.apply(X)]


def tree_seed(seed: int, tree_index: int) -> int:
    """64-bit seed for one tree, mixed from the forest seed and the tree index."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(tree_index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _node_rng(seed: int, path: tuple[int, ...]) -> np.random.Generator:
    # path holds 0/1 turns from the root; the root gets a distinct key
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,) + path))


def _best_split(proj: np.ndarray, labels: np.ndarray, parent_gini: float):
    """Best midpoint threshold on one projected axis.

    Returns ``(gain, position, threshold)``; ``position`` is the index in the
    sorted order of the last row sent left, used only for tie-breaking.
    """
    order = np.argsort(proj, kind="stable")
    p = proj[order]
    y = labels[order]
    n = len(p)
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    left_pos = np.cumsum(y)[:-1].astype(np.float64)
    total_pos = float(y.sum())
    right_pos = total_pos - left_pos
    pl = left_pos / n_left
    pr = right_pos / n_right
    gini_l = 2.0 * pl * (1.0 - pl)
    gini_r = 2.0 * pr * (1.0 - pr)
    gain = parent_gini - (n_left * gini_l + n_right * gini_r) / n
    gain[~(p[:-1] < p[1:])] = -np.inf
    pos = int(np.argmax(gain))
    if not gain[pos] > MIN_GAIN:
        return -np.inf, -1, np.nan
    lo, hi = p[pos], p[pos + 1]
    threshold = lo + (hi - lo) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return float(gain[pos]), pos, float(threshold)


def grow_tree(data: PixelDataset | tuple, config: ForestConfig, seed: int) -> CcTree:
    """Grow one canonical correlation tree on standardized rows.

    ``data`` is a :class:`PixelDataset` or an ``(X, y)`` pair.
    """
    if isinstance(data, PixelDataset):
        X, y = data.features, data.labels
    else:
        X, y = (np.asarray(a) for a in data)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise InputError("cannot grow a tree on empty data")
    n_features = X.shape[1]
    seed = int(seed)

    directions, thresholds, lefts, rights, counts = [], [], [], [], []

    def new_node(node_counts):
        directions.append(np.zeros(n_features))
        thresholds.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        counts.append(node_counts)
        return len(thresholds) - 1

    # preorder construction: pop left child first
    root_rows = np.arange(len(X))
    stack = [(root_rows, 0, (), None)]
    while stack:
        rows, depth, path, attach = stack.pop()
        node_counts = np.bincount(y[rows], minlength=N_CLASS)
        node = new_node(node_counts)
        if attach is not None:
            parent, side = attach
            (lefts if side == 0 else rights)[parent] = node

        split = None
        if (
            np.count_nonzero(node_counts) > 1
            and len(rows) >= config.min_node_size
            and (config.max_depth is None or depth < config.max_depth)
        ):
            split = _choose_split(X[rows], y[rows], node_counts, config.ridge,
                                  _node_rng(seed, path))
        if split is None:
            continue
        direction, threshold, go_left = split
        directions[node] = direction
        thresholds[node] = threshold
        stack.append((rows[~go_left], depth + 1, path + (1,), (node, 1)))
        stack.append((rows[go_left], depth + 1, path + (0,), (node, 0)))

    return CcTree(
        np.array(directions, dtype=np.float64).reshape(len(thresholds), n_features),
        np.array(thresholds, dtype=np.float64),
        np.array(lefts, dtype=np.int64),
        np.array(rights, dtype=np.int64),
        np.array(counts, dtype=np.int64).reshape(len(thresholds), N_CLASS),
    )


def _choose_split(X, y, node_counts, ridge, rng):
    n = len(y)
    boot = rng.integers(0, n, size=n)
    if np.unique(y[boot]).size < 2:
        # a single-class resample carries no label correlation; use the node itself
        boot = np.arange(n)
    cca = compute_cca(X[boot], one_hot(y[boot], N_CLASS), ridge)
    parent_gini = gini_impurity(node_counts)
    best = None
    for k in range(cca.n_components):
        w = cca.proj_x[:, k]
        norm = np.linalg.norm(w)
        if not norm > 0:
            continue
        w = w / norm
        proj = X @ w
        # orient so informal rows sit on the high side; unlike a sign rule on the
        # coefficients this survives affine rescaling of the features
        if proj[y == 1].mean() < proj[y == 0].mean():
            w = -w
            proj = X @ w
        gain, pos, threshold = _best_split(proj, y, parent_gini)
        # ties keep the earlier direction; within one, argmax kept the lowest threshold
        if best is None or gain > best[0]:
            best = (gain, pos, threshold, w, proj)
    if best is None or best[0] == -np.inf:
        return None
    _, _, threshold, w, proj = best
    return w, threshold, proj <= threshold


def _grow_one(X, y, config, index):
    return grow_tree((X, y), config, tree_seed(config.seed, index))


def resolve_n_jobs(n_jobs: int | None) -> int:
    if n_jobs is None:
        n_jobs = int(os.environ.get("SETTLEMENT_CCF_THREADS", "1"))
    if n_jobs < 0:
        n_jobs = os.cpu_count() or 1
    return max(1, int(n_jobs))


@dataclass
class Forest:
    config: ForestConfig
    trees: list[CcTree]
    standardizer: Standardizer
    band_ids: tuple[str, ...]
    format_version: int = FORMAT_VERSION
    single_class: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.band_ids = tuple(self.band_ids)
        if len(self.trees) != self.config.n_trees:
            raise InputError(
                f"forest holds {len(self.trees)} trees, config says {self.config.n_trees}"
            )
        d = len(self.band_ids)
        if len(self.standardizer.means) != d:
            raise DimensionMismatchError("standardizer length differs from band list")
        for tree in self.trees:
            if tree.directions.shape[1] != d:
                raise DimensionMismatchError(
                    f"tree direction length {tree.directions.shape[1]} != {d} bands"
                )

    @property
    def n_features(self) -> int:
        return len(self.band_ids)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"expected {self.n_features} features, got {X.shape[1]}"
            )
        if not np.isfinite(X).all():
            raise InputError("features must be finite")
        return X

    def predict_proba(self, X) -> np.ndarray:
        """Mean informal-class leaf proportion over trees, for standardized rows."""
        X = self._check(X)
        probs = np.zeros(len(X))
        for tree in self.trees:
            probs += tree.predict_proba(X)
        return probs / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    def apply(self, X) -> np.ndarray:
        """(n_rows, n_trees) leaf indices."""
        X = self._check(X)
        return np.stack([t.apply(X) for t in self.trees], axis=1)


def train_forest(train: PixelDataset, config: ForestConfig = ForestConfig(),
                 standardizer: Standardizer | None = None,
                 n_jobs: int | None = 1) -> Forest:
    """Grow ``config.n_trees`` trees on standardized training rows.

    ``standardizer`` is the transform already applied to ``train``; it is stored
    with the forest so raw reflectances can be scored later. Trees are
    seeded independently, so the result does not depend on ``n_jobs``.
    """
    if len(train) == 0:
        raise InputError("cannot train on an empty dataset")
    X, y = train.features, train.labels
    single = np.count_nonzero(train.class_counts()) < 2
    if single:
        log.warning("training set holds a single class; every tree will be one leaf")
    if standardizer is None:
        d = X.shape[1]
        standardizer = Standardizer(np.zeros(d), np.ones(d))
    band_ids = train.band_ids or tuple(f"f{i}" for i in range(X.shape[1]))

    n_jobs = min(resolve_n_jobs(n_jobs), config.n_trees)
    if n_jobs == 1:
        trees = [_grow_one(X, y, config, i) for i in range(config.n_trees)]
    else:
        trees = Parallel(n_jobs=n_jobs)(
            delayed(_grow_one)(X, y, config, i) for i in range(config.n_trees)
        )
    return Forest(config, list(trees), standardizer, band_ids, single_class=bool(single))


def predict_class(forest: Forest, features) -> tuple[int, float]:
    """Class and informal probability of one standardized feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise DimensionMismatchError("predict_class takes a single feature vector")
    prob = float(forest.predict_proba(features)[0])
    return (Label.INFORMAL if prob > 0.5 else Label.ENVIRONMENT), prob


def prepare_raster(forest: Forest, raster: MultiSpectralRaster) -> MultiSpectralRaster:
    """Select the forest's bands (in its order) and bring them to the 10 m grid."""
    try:
        return resample_to_common_grid(select_bands(raster, forest.band_ids))
    except BandMismatchError as exc:
        raise BandMismatchError(f"raster incompatible with model: {exc}") from None


def predict_map(forest: Forest, raster: MultiSpectralRaster,
                chunk_size: int = 1 << 16) -> ClassMap:
    """Score every pixel of a raw-reflectance raster.

    Pixels holding nodata in any band become ENVIRONMENT with probability 0;
    their number is reported as ``ClassMap.nodata_count``.
    """
    raster = prepare_raster(forest, raster)
    stack = raster.stack()
    features = stack.reshape(len(raster.bands), -1).T
    nodata = raster.nodata_mask().ravel()
    prob = np.zeros(features.shape[0])
    valid = np.flatnonzero(~nodata)
    for start in range(0, valid.size, chunk_size):
        idx = valid[start:start + chunk_size]
        X = forest.standardizer.transform(features[idx].astype(np.float64))
        prob[idx] = forest.predict_proba(X)
    shape = (raster.height, raster.width)
    classes = prob > 0.5
    prob32 = prob.astype(np.float32)
    # float32 rounding must not pull an informal pixel back onto the 0.5 tie
    prob32[classes & (prob32 <= 0.5)] = np.nextafter(np.float32(0.5), np.float32(1))
    return ClassMap(classes.reshape(shape), prob32.reshape(shape),
                    nodata_count=int(nodata.sum()))
