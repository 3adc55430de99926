"""Confusion-matrix metrics and the cross-region evaluation grid."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import BandMismatchError, DimensionMismatchError, InputError
from .raster import Label

CLASS_NAMES = ("environment", "informal")

CSV_COLUMNS = ("train_region", "test_region", "pixel_acc", "acc_env", "acc_inf",
               "iou_env", "iou_inf", "mean_iou", "n_pixels")


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]``: pixels of true class ``i`` predicted as class ``j``."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DimensionMismatchError("confusion matrix must be square")
        if (counts < 0).any():
            raise InputError("confusion counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def n_class(self) -> int:
        return self.counts.shape[0]

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion_matrix(predicted, truth, n_class: int = 2) -> ConfusionMatrix:
    """Count (truth, prediction) pairs; UNLABELED (-1) truth entries are skipped."""
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if predicted.shape != truth.shape:
        raise DimensionMismatchError(
            f"{predicted.size} predictions vs {truth.size} truth labels"
        )
    keep = truth != Label.UNLABELED
    predicted, truth = predicted[keep], truth[keep]
    for name, seq in (("predicted", predicted), ("truth", truth)):
        if seq.size and (seq.min() < 0 or seq.max() >= n_class):
            raise InputError(f"{name} class out of range [0, {n_class})")
    counts = np.bincount(truth * n_class + predicted, minlength=n_class * n_class)
    return ConfusionMatrix(counts.reshape(n_class, n_class))


def _require_nonempty(cm: ConfusionMatrix) -> None:
    if cm.total == 0:
        raise InputError("metrics are undefined on an empty confusion matrix")


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    return float(np.trace(cm.counts) / cm.total)


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """Recall per class; NaN for classes absent from the truth."""
    _require_nonempty(cm)
    totals = cm.row_totals
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, np.diag(cm.counts) / totals, np.nan)


def iou(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class ``n_ii / (t_i + sum_j n_ji - n_ii)`` and their mean.

    A class absent from both truth and prediction has 0/0 IoU; it is reported
    as NaN and left out of the mean.
    """
    _require_nonempty(cm)
    diag = np.diag(cm.counts).astype(np.float64)
    union = cm.row_totals + cm.counts.sum(axis=0) - diag
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, diag / union, np.nan)
    return per_class, float(np.nanmean(per_class))


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    train_region: str | None = None
    test_region: str | None = None
    pixel_accuracy: float = field(init=False)
    per_class_accuracy: np.ndarray = field(init=False)
    per_class_iou: np.ndarray = field(init=False)
    mean_iou: float = field(init=False)

    def __post_init__(self):
        self.pixel_accuracy = pixel_accuracy(self.confusion)
        self.per_class_accuracy = per_class_accuracy(self.confusion)
        self.per_class_iou, self.mean_iou = iou(self.confusion)

    @property
    def n_pixels(self) -> int:
        return self.confusion.total

    @property
    def undefined_iou(self) -> list[str]:
        return [CLASS_NAMES[i] for i in np.flatnonzero(np.isnan(self.per_class_iou))]

    def to_dict(self) -> dict:
        def clean(values):
            return [None if math.isnan(v) else float(v) for v in values]

        return {
            "train_region": self.train_region,
            "test_region": self.test_region,
            "confusion_matrix": self.confusion.counts.tolist(),
            "n_pixels": self.n_pixels,
            "pixel_accuracy": self.pixel_accuracy,
            "per_class_accuracy": dict(zip(CLASS_NAMES, clean(self.per_class_accuracy))),
            "per_class_iou": dict(zip(CLASS_NAMES, clean(self.per_class_iou))),
            "mean_iou": self.mean_iou,
            "undefined_iou": self.undefined_iou,
        }

    def csv_row(self) -> dict:
        def pct(v):
            return "" if math.isnan(v) else f"{100 * v:.2f}"

        return {
            "train_region": self.train_region or "",
            "test_region": self.test_region or "",
            "pixel_acc": pct(self.pixel_accuracy),
            "acc_env": pct(self.per_class_accuracy[0]),
            "acc_inf": pct(self.per_class_accuracy[1]),
            "iou_env": pct(self.per_class_iou[0]),
            "iou_inf": pct(self.per_class_iou[1]),
            "mean_iou": pct(self.mean_iou),
            "n_pixels": str(self.n_pixels),
        }


def evaluate(forest, dataset, train_region: str | None = None,
             test_region: str | None = None) -> EvalReport:
    """Score a raw-reflectance dataset with the forest's own standardizer."""
    if dataset.band_ids and tuple(dataset.band_ids) != tuple(forest.band_ids):
        raise BandMismatchError(
            f"dataset bands {list(dataset.band_ids)} differ from model bands "
            f"{list(forest.band_ids)}"
        )
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    X = forest.standardizer.transform(dataset.features)
    cm = confusion_matrix(forest.predict(X), dataset.labels, 2)
    return EvalReport(cm, train_region, test_region or dataset.region)


def cross_region_matrix(models: Mapping[str, object],
                        datasets: Mapping[str, object]) -> dict[str, dict[str, EvalReport]]:
    """Evaluate every named model on every named raw-reflectance dataset.

    Returns ``{model_name: {dataset_name: EvalReport}}`` preserving input order.
    """
    return {
        m_name: {d_name: evaluate(model, data, m_name, d_name)
                 for d_name, data in datasets.items()}
        for m_name, model in models.items()
    }


# --------------------------------------------------------------------------
# export


def write_report_json(reports, path: str | os.PathLike, extra: dict | None = None) -> None:
    """``reports`` is one EvalReport or a ``{model: {dataset: report}}`` grid."""
    if isinstance(reports, EvalReport):
        doc = reports.to_dict()
    else:
        doc = {"cells": [
            cell.to_dict() if isinstance(cell, EvalReport)
            else {"train_region": m, "test_region": d, "error": str(cell)}
            for m, row in reports.items() for d, cell in row.items()
        ]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_report_csv(reports, path: str | os.PathLike) -> None:
    """One line per cell; failed cells keep their names and an ``ERROR`` marker."""
    if isinstance(reports, EvalReport):
        reports = {reports.train_region: {reports.test_region: reports}}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for m_name, row in reports.items():
            for d_name, cell in row.items():
                if isinstance(cell, EvalReport):
                    writer.writerow(cell.csv_row())
                else:
                    writer.writerow({c: "ERROR" for c in CSV_COLUMNS}
                                    | {"train_region": m_name, "test_region": d_name})


def _pct(v: float) -> str:
    return "" if v is None or math.isnan(v) else f"{100 * v:.2f}"


def appendix_tables(grid: Mapping[str, Mapping[str, object]]) -> dict[str, list[list[str]]]:
    """Per-class accuracy and IoU tables laid out model-by-row, dataset-by-column.

    Accuracy rows per model: ``Informal``, ``Environment``. IoU rows per model:
    ``Informal IOU``, ``Environment IOU``, ``Mean IOU``. Failed cells read ``ERROR``.
    """
    datasets: list[str] = []
    for row in grid.values():
        for d in row:
            if d not in datasets:
                datasets.append(d)
    header = ["model", "row", *datasets]
    accuracy, iou_rows = [header], [header]

    def cell(report, fn):
        if report is None:
            return ""
        if not isinstance(report, EvalReport):
            return "ERROR"
        return _pct(fn(report))

    for m_name, row in grid.items():
        accuracy.append([m_name, "Informal",
                         *(cell(row.get(d), lambda r: r.per_class_accuracy[1]) for d in datasets)])
        accuracy.append([m_name, "Environment",
                         *(cell(row.get(d), lambda r: r.per_class_accuracy[0]) for d in datasets)])
        iou_rows.append([m_name, "Informal IOU",
                         *(cell(row.get(d), lambda r: r.per_class_iou[1]) for d in datasets)])
        iou_rows.append([m_name, "Environment IOU",
                         *(cell(row.get(d), lambda r: r.per_class_iou[0]) for d in datasets)])
        iou_rows.append([m_name, "Mean IOU",
                         *(cell(row.get(d), lambda r: r.mean_iou) for d in datasets)])
    return {"accuracy": accuracy, "iou": iou_rows}


def write_table_csv(rows: Sequence[Sequence[str]], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)
