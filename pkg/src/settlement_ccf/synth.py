"""Seeded synthetic scenes and independent reference oracles.

Scenes are spectral-only: each pixel's reflectance vector is drawn from a
diagonal Gaussian chosen by its class, with informal pixels filling a set of
rectangles on an environment background.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import yaml

from .cca import CcaResult, ridge_pair
from .errors import InputError
from .raster import Label, LabelMask, MultiSpectralRaster, make_raster
from .sampling import DEFAULT_BANDS

# Rough Level-1C top-of-atmosphere reflectances for bare ground/vegetation mix.
DEFAULT_BASE_MEAN = (0.12, 0.11, 0.10, 0.13, 0.18, 0.21, 0.23, 0.24, 0.20, 0.15)
DEFAULT_STD = 0.01


@dataclass
class SceneSpec:
    """Recipe for one synthetic scene.

    Informal mean = environment mean + ``separation * max(std) * direction``
    + ``informal_shift``, where ``direction`` is a unit vector (uniform across
    bands by default). ``regions`` are ``(x0, y0, x1, y1)`` half-open informal
    rectangles; everything else is environment.
    """

    width: int = 64
    height: int = 64
    regions: list = field(default_factory=lambda: [(8, 8, 32, 40), (40, 20, 60, 56)])
    environment_mean: tuple = DEFAULT_BASE_MEAN
    environment_std: tuple | float = DEFAULT_STD
    informal_std: tuple | float = DEFAULT_STD
    separation: float = 6.0
    direction: tuple | None = None
    informal_shift: tuple | None = None
    label_fraction: float = 0.05
    band_ids: tuple = DEFAULT_BANDS
    seed: int = 0

    def __post_init__(self):
        d = len(self.band_ids)
        self.band_ids = tuple(str(b) for b in self.band_ids)
        self.regions = [tuple(int(v) for v in r) for r in self.regions]
        self.environment_mean = self._vector(self.environment_mean, "environment_mean")
        self.environment_std = self._vector(self.environment_std, "environment_std")
        self.informal_std = self._vector(self.informal_std, "informal_std")
        direction = np.ones(d) if self.direction is None else self._vector(self.direction, "direction")
        norm = np.linalg.norm(direction)
        if not norm > 0:
            raise InputError("direction must be non-zero")
        self.direction = direction / norm
        shift = np.zeros(d) if self.informal_shift is None else self.informal_shift
        self.informal_shift = self._vector(shift, "informal_shift")
        self.validate()

    def _vector(self, value, name) -> np.ndarray:
        d = len(self.band_ids)
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = np.full(d, float(arr))
        if arr.shape != (d,):
            raise InputError(f"{name} must have {d} entries")
        if not np.isfinite(arr).all():
            raise InputError(f"{name} must be finite")
        return arr

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InputError("scene dimensions must be positive")
        if not 0.0 < self.label_fraction <= 1.0:
            raise InputError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if (self.environment_std <= 0).any() or (self.informal_std <= 0).any():
            raise InputError("class standard deviations must be positive")
        if self.separation < 0:
            raise InputError("separation must be non-negative")
        for r in self.regions:
            if len(r) != 4:
                raise InputError(f"region {r} must be (x0, y0, x1, y1)")
            x0, y0, x1, y1 = r
            if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
                raise InputError(f"region {r} lies outside the {self.width}x{self.height} scene")

    @property
    def informal_mean(self) -> np.ndarray:
        scale = max(self.environment_std.max(), self.informal_std.max())
        return self.environment_mean + self.separation * scale * self.direction + self.informal_shift

    def class_grid(self) -> np.ndarray:
        grid = np.zeros((self.height, self.width), dtype=np.int8)
        for x0, y0, x1, y1 in self.regions:
            grid[y0:y1, x0:x1] = Label.INFORMAL
        return grid


def load_scene_spec(path: str | os.PathLike) -> SceneSpec:
    """Read a YAML scene file; keys mirror :class:`SceneSpec` fields."""
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: scene spec must be a mapping")
    doc = doc.get("scene", doc)
    known = SceneSpec.__dataclass_fields__
    unknown = set(doc) - set(known)
    if unknown:
        raise InputError(f"{path}: unknown scene keys {sorted(unknown)}")
    try:
        return SceneSpec(**doc)
    except TypeError as exc:
        raise InputError(f"{path}: {exc}") from None


def generate_scene(spec: SceneSpec) -> tuple[MultiSpectralRaster, LabelMask]:
    rng = np.random.default_rng(spec.seed)
    truth = spec.class_grid()
    informal = truth == Label.INFORMAL
    d = len(spec.band_ids)
    noise = rng.standard_normal((spec.height, spec.width, d))
    mean = np.where(informal[..., None], spec.informal_mean, spec.environment_mean)
    std = np.where(informal[..., None], spec.informal_std, spec.environment_std)
    pixels = (mean + std * noise).astype(np.float32)

    n_pixels = spec.width * spec.height
    n_labeled = max(1, int(round(spec.label_fraction * n_pixels)))
    chosen = rng.choice(n_pixels, size=n_labeled, replace=False)
    labels = np.full(n_pixels, Label.UNLABELED, dtype=np.int8)
    labels[chosen] = truth.ravel()[chosen]
    raster = make_raster(np.moveaxis(pixels, -1, 0), spec.band_ids)
    return raster, LabelMask(labels.reshape(spec.height, spec.width))


def nearest_centroid_predict(train_X, train_y, test_X) -> np.ndarray:
    """Assign each row to the class whose training mean is nearer; ties go to class 0."""
    train_X = np.asarray(train_X, dtype=np.float64)
    train_y = np.asarray(train_y)
    if not ((train_y == 0).any() and (train_y == 1).any()):
        raise InputError("nearest-centroid oracle needs both classes in train")
    c0 = train_X[train_y == 0].mean(axis=0)
    c1 = train_X[train_y == 1].mean(axis=0)
    test_X = np.asarray(test_X, dtype=np.float64)
    d0 = ((test_X - c0) ** 2).sum(axis=1)
    d1 = ((test_X - c1) ** 2).sum(axis=1)
    return (d1 < d0).astype(np.int64)


def nearest_centroid_oracle(train, test) -> float:
    """Held-out accuracy of the nearest-class-mean rule on standardized datasets."""
    pred = nearest_centroid_predict(train.features, train.labels, test.features)
    return float(np.mean(pred == test.labels))


def brute_force_cca(X, Y, ridge=None) -> CcaResult:
    """Reference CCA from the symmetric-definite generalized eigenproblem

        [[0, Cxy], [Cyx, 0]] w = rho [[Cxx, 0], [0, Cyy]] w

    solved densely. Only meant for small test instances.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    Y = Y[:, None] if Y.ndim == 1 else Y
    if len(X) != len(Y) or len(X) < 2:
        raise InputError("need at least two paired rows")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise InputError("inputs must be finite")
    n, d = X.shape
    Z = np.hstack([X, Y])
    Z = Z - Z.sum(axis=0) / n
    S = Z.T @ Z / (n - 1)
    rx, ry = ridge_pair(Z[:, :d], Z[:, d:], ridge)
    A = np.zeros_like(S)
    A[:d, d:] = S[:d, d:]
    A[d:, :d] = S[d:, :d]
    B = np.zeros_like(S)
    B[:d, :d] = S[:d, :d] + np.diag(rx)
    B[d:, d:] = S[d:, d:] + np.diag(ry)
    vals, vecs = scipy.linalg.eigh(A, B)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]

    Yc = Z[:, d:]
    sv = np.linalg.svd(Yc, compute_uv=False) if Yc.size else np.zeros(0)
    rank = int((sv > sv.max(initial=0) * max(Yc.shape) * np.finfo(float).eps).sum())
    k = min(d, rank, n - 1)
    # eigh normalizes w'Bw = 1, i.e. each block half-unit; rescale to unit variance
    proj_x = vecs[:d, :k] * np.sqrt(2.0)
    proj_y = vecs[d:, :k] * np.sqrt(2.0)
    for j in range(k):
        pivot = np.argmax(np.abs(proj_x[:, j]))
        if proj_x[pivot, j] < 0:
            proj_x[:, j] *= -1
            proj_y[:, j] *= -1
    return CcaResult(proj_x, proj_y, np.clip(vals[:k], 0.0, None))


def axis_aligned_ceiling(X, y) -> float:
    """Best training accuracy of any single threshold on any single feature.

    Exhaustive: every midpoint between consecutive distinct values, both
    orientations.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    best = max(np.mean(y == 0), np.mean(y == 1))
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        for t in (values[:-1] + values[1:]) / 2:
            pred = (X[:, j] > t).astype(int)
            acc = np.mean(pred == y)
            best = max(best, acc, 1 - acc)
    return float(best)


def diagonal_dataset(n_per_class: int = 40, margin: float = 4.0, spread: float = 3.0,
                     seed: int = 0):
    """Two classes split by ``x1 + x2 = 0`` whose per-axis ranges overlap.

    Points sit at distance ``margin / 2`` to ``margin / 2 + 0.5`` either side of
    the separating line and spread up to ``spread`` along it, so a single-axis
    threshold cannot separate them. Returns ``(X, y, gap)`` where ``gap`` is the
    smallest distance between the classes along the unit normal (1, 1)/sqrt(2).
    """
    rng = np.random.default_rng(seed)
    along = rng.uniform(-spread, spread, size=2 * n_per_class)
    offset = rng.uniform(margin / 2, margin / 2 + 0.5, size=2 * n_per_class)
    y = np.repeat([0, 1], n_per_class)
    sign = np.where(y == 1, 1.0, -1.0)
    u = np.array([1.0, 1.0]) / np.sqrt(2)
    v = np.array([1.0, -1.0]) / np.sqrt(2)
    X = np.outer(sign * offset, u) + np.outer(along, v)
    s = X @ u
    gap = s[y == 1].min() - s[y == 0].max()
    return X, y, float(gap)


@dataclass(frozen=True)
class SceneBenchmark:
    ccf_accuracy: float
    oracle_accuracy: float
    mean_iou: float
    n_train: int
    n_test: int


def benchmark_scene(spec: SceneSpec, config=None, train_fraction: float = 0.8,
                    n_jobs: int | None = 1) -> SceneBenchmark:
    """Generate ``spec``, run the default sampling protocol, and score a forest
    against the nearest-centroid oracle on the same held-out pixels."""
    from .forest import ForestConfig, train_forest
    from .metrics import evaluate
    from .sampling import apply_standardizer, fit_standardizer, prepare_datasets

    raster, mask = generate_scene(spec)
    train, test = prepare_datasets(raster, mask, band_ids=spec.band_ids,
                                   train_fraction=train_fraction, seed=spec.seed)
    std = fit_standardizer(train)
    train_s, test_s = apply_standardizer(std, train), apply_standardizer(std, test)
    forest = train_forest(train_s, config or ForestConfig(seed=spec.seed), std, n_jobs=n_jobs)
    report = evaluate(forest, test)
    return SceneBenchmark(report.pixel_accuracy, nearest_centroid_oracle(train_s, test_s),
                          report.mean_iou, len(train), len(test))
