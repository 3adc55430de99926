"""From a raster + mask pair to balanced, standardized train/test pixel sets."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BandMismatchError, DimensionMismatchError, InputError
from .raster import (
    BandInfo,
    Label,
    LabelMask,
    MultiSpectralRaster,
    check_alignment,
    normalize_band_id,
)

DEFAULT_BANDS = ("2", "3", "4", "5", "6", "7", "8", "8A", "11", "12")

# Stage tags mixed into the seed so balancing and splitting draw independent streams.
_BALANCE_STREAM = 1
_SPLIT_STREAM = 2


@dataclass
class PixelDataset:
    """Spectral feature rows with binary labels.

    ``xs``/``ys`` record the pixel column/row each sample came from, and
    ``region`` the scene name; they are optional but travel with every subset.
    ``n_dropped`` counts labeled pixels discarded for holding nodata.
    """

    features: np.ndarray
    labels: np.ndarray
    band_ids: tuple[str, ...] = ()
    xs: np.ndarray | None = None
    ys: np.ndarray | None = None
    region: str | None = None
    n_dropped: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.labels), -1)
        if len(self.features) != len(self.labels):
            raise DimensionMismatchError(
                f"{len(self.features)} feature rows but {len(self.labels)} labels"
            )
        if not np.isfinite(self.features).all():
            raise InputError("features must be finite")
        if self.labels.size and not np.isin(self.labels, [0, 1]).all():
            raise InputError("labels must be 0 (environment) or 1 (informal)")
        self.band_ids = tuple(self.band_ids)
        if self.band_ids and len(self.band_ids) != self.features.shape[1]:
            raise DimensionMismatchError("band_ids length differs from feature width")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=2)

    def take(self, index) -> "PixelDataset":
        index = np.asarray(index, dtype=np.intp)
        return PixelDataset(
            self.features[index],
            self.labels[index],
            self.band_ids,
            None if self.xs is None else self.xs[index],
            None if self.ys is None else self.ys[index],
            self.region,
            self.n_dropped,
        )

    def with_features(self, features: np.ndarray) -> "PixelDataset":
        return PixelDataset(features, self.labels, self.band_ids, self.xs, self.ys,
                            self.region, self.n_dropped)


@dataclass
class Standardizer:
    means: np.ndarray
    stds: np.ndarray
    zero_variance: np.ndarray = field(default=None)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if self.zero_variance is None:
            self.zero_variance = np.zeros(self.means.shape, dtype=bool)
        self.zero_variance = np.asarray(self.zero_variance, dtype=bool)
        if self.means.shape != self.stds.shape or self.means.ndim != 1:
            raise DimensionMismatchError("means and stds must be equal-length vectors")
        if not (np.isfinite(self.means).all() and np.isfinite(self.stds).all()):
            raise InputError("standardizer parameters must be finite")
        if (self.stds <= 0).any():
            raise InputError("standardizer stds must be strictly positive")

    def transform(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != len(self.means):
            raise DimensionMismatchError(
                f"expected {len(self.means)} features, got {features.shape[-1]}"
            )
        return (features - self.means) / self.stds


# --------------------------------------------------------------------------
# raster preparation


def select_bands(raster: MultiSpectralRaster,
                 band_ids: Sequence = DEFAULT_BANDS) -> MultiSpectralRaster:
    """Keep ``band_ids`` in the requested order; Sentinel-2 bands 1, 9, 10 drop by default."""
    wanted = [normalize_band_id(b) for b in band_ids]
    have = raster.band_ids
    missing = [b for b in wanted if b not in have]
    if missing:
        raise BandMismatchError(f"raster lacks bands {missing} (has {list(have)})")
    if len(set(wanted)) != len(wanted):
        raise InputError(f"duplicate band in request {wanted}")
    idx = [have.index(b) for b in wanted]
    return MultiSpectralRaster(
        raster.width, raster.height,
        tuple(raster.bands[i] for i in idx),
        tuple(raster.data[i] for i in idx),
        raster.nodata_value, raster.geotransform,
    )


def resample_to_common_grid(raster: MultiSpectralRaster) -> MultiSpectralRaster:
    """Bring 20 m bands onto the 10 m grid by 2x2 nearest-neighbour replication."""
    if raster.on_common_grid:
        return raster
    grids = []
    for band, grid in zip(raster.bands, raster.data):
        if band.native_resolution == 60:
            raise InputError(f"band {band.band_id} is 60 m; only 10 m and 20 m are supported")
        if band.native_resolution == 20:
            grid = np.repeat(np.repeat(grid, 2, axis=0), 2, axis=1)
            grid = grid[:raster.height, :raster.width]
        grids.append(grid)
    bands = tuple(BandInfo(b.band_id, 10) for b in raster.bands)
    return MultiSpectralRaster(raster.width, raster.height, bands, tuple(grids),
                               raster.nodata_value, raster.geotransform)


def extract_labeled_pixels(raster: MultiSpectralRaster, mask: LabelMask,
                           region: str | None = None) -> PixelDataset:
    """One row per labeled mask cell in row-major scan order; nodata rows are dropped."""
    check_alignment(raster, mask)
    stack = raster.stack()
    labeled = mask.labels != Label.UNLABELED
    usable = labeled & ~raster.nodata_mask()
    ys, xs = np.nonzero(usable)
    features = stack[:, ys, xs].T.astype(np.float64)
    labels = mask.labels[ys, xs].astype(np.int64)
    return PixelDataset(
        features.reshape(len(ys), len(raster.bands)), labels, raster.band_ids,
        xs.astype(np.int64), ys.astype(np.int64), region,
        n_dropped=int(labeled.sum() - usable.sum()),
    )


# --------------------------------------------------------------------------
# sampling protocol


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream,)))


def _require_both_classes(dataset: PixelDataset, minimum: int = 1) -> np.ndarray:
    counts = dataset.class_counts()
    if (counts < minimum).any():
        raise InputError(
            f"need at least {minimum} row(s) of each class, have counts {counts.tolist()}"
        )
    return counts


def balance_classes(dataset: PixelDataset, seed: int) -> PixelDataset:
    """Subsample every class down to the minority count, then shuffle."""
    counts = _require_both_classes(dataset)
    n = int(counts.min())
    rng = _rng(seed, _BALANCE_STREAM)
    chosen = []
    for cls in (0, 1):
        rows = np.flatnonzero(dataset.labels == cls)
        chosen.append(np.sort(rng.choice(rows, size=n, replace=False)))
    index = np.concatenate(chosen)
    return dataset.take(index[rng.permutation(len(index))])


def split_train_test(dataset: PixelDataset, train_fraction: float = 0.8,
                     seed: int = 0) -> tuple[PixelDataset, PixelDataset]:
    """Per class, ``floor(train_fraction * n)`` random rows train and the rest test."""
    if not 0.0 < train_fraction < 1.0:
        raise InputError(f"train_fraction must lie strictly in (0, 1), got {train_fraction}")
    _require_both_classes(dataset, minimum=2)
    rng = _rng(seed, _SPLIT_STREAM)
    train_idx, test_idx = [], []
    for cls in (0, 1):
        rows = np.flatnonzero(dataset.labels == cls)
        # rounding guard: 0.8 * 15 must floor to 12, not 11
        n_train = math.floor(round(train_fraction * len(rows), 9))
        if n_train == 0 or n_train == len(rows):
            raise InputError(
                f"class {cls}: {len(rows)} rows leave an empty side at "
                f"train_fraction={train_fraction}"
            )
        perm = rows[rng.permutation(len(rows))]
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    train = np.concatenate(train_idx)
    test = np.concatenate(test_idx)
    return (dataset.take(train[rng.permutation(len(train))]),
            dataset.take(test[rng.permutation(len(test))]))


def fit_standardizer(train: PixelDataset | np.ndarray) -> Standardizer:
    """Column means and population standard deviations of the training rows.

    Zero-variance columns get a std of 1 and are flagged in ``zero_variance``.
    """
    X = train.features if isinstance(train, PixelDataset) else np.asarray(train, float)
    if len(X) == 0:
        raise InputError("cannot fit a standardizer on an empty training set")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    # a constant column can still pick up ~1e-16 relative rounding in mean/std
    constant = (X == X[0]).all(axis=0)
    means[constant] = X[0, constant]
    flat = constant | ~(stds > 1e-12 * np.abs(means))
    stds = np.where(flat, 1.0, stds)
    return Standardizer(means, stds, flat)


def apply_standardizer(standardizer: Standardizer, dataset: PixelDataset) -> PixelDataset:
    if len(dataset) == 0:
        return dataset.with_features(np.empty((0, len(standardizer.means))))
    return dataset.with_features(standardizer.transform(dataset.features))


def prepare_datasets(raster: MultiSpectralRaster, mask: LabelMask, *,
                     band_ids: Sequence = DEFAULT_BANDS, train_fraction: float = 0.8,
                     seed: int = 0, region: str | None = None):
    """The full sampling protocol: select, resample, extract, balance, split.

    Returns ``(train, test)`` in raw reflectance units; standardization is left
    to the caller so the fitted parameters can be stored with the model.
    """
    raster = resample_to_common_grid(select_bands(raster, band_ids))
    data = extract_labeled_pixels(raster, mask, region=region)
    balanced = balance_classes(data, seed)
    return split_train_test(balanced, train_fraction, seed)


def write_csv(dataset: PixelDataset, path: str | os.PathLike) -> None:
    """Export as ``x,y,label,b2,...`` with one pixel per line."""
    names = [f"b{b.lower()}" for b in dataset.band_ids] or [
        f"f{i}" for i in range(dataset.n_features)
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label", *names])
        for i in range(len(dataset)):
            x = "" if dataset.xs is None else int(dataset.xs[i])
            y = "" if dataset.ys is None else int(dataset.ys[i])
            writer.writerow([x, y, int(dataset.labels[i]),
                             *(repr(float(v)) for v in dataset.features[i])])


def read_csv(path: str | os.PathLike) -> PixelDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    band_ids = tuple(normalize_band_id(h[1:]) for h in header[3:] if h.startswith("b"))
    xs = [int(r[0]) if r[0] else -1 for r in body]
    ys = [int(r[1]) if r[1] else -1 for r in body]
    features = np.array([[float(v) for v in r[3:]] for r in body], dtype=np.float64)
    return PixelDataset(
        features.reshape(len(body), len(header) - 3),
        [int(r[2]) for r in body],
        band_ids if len(band_ids) == len(header) - 3 else (),
        np.array(xs, dtype=np.int64), np.array(ys, dtype=np.int64),
    )
