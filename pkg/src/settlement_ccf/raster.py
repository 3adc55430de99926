"""In-memory and on-disk representation of rasters, label masks and class maps.

A raster lives in a directory holding two files:

``header.json``
    UTF-8 JSON with ``width``, ``height`` (the 10 m reference grid), ``bands``
    (list of ``{"band_id": ..., "native_resolution": ...}``), ``dtype``
    (always ``"f32le"``) and optional ``nodata`` and ``geotransform``.
``bands.bin``
    Band-sequential, row-major, little-endian float32 samples. A band at
    native resolution ``r`` covers ``ceil(width * 10 / r)`` by
    ``ceil(height * 10 / r)`` samples.

Masks and output maps are 8-bit binary PGM (P5) files.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DimensionMismatchError, MaskFormatError, RasterFormatError

HEADER_NAME = "header.json"
PAYLOAD_NAME = "bands.bin"
DTYPE_TAG = "f32le"

BAND_IDS = ("1", "2", "3", "4", "5", "6", "7", "8", "8A", "9", "10", "11", "12")
RESOLUTIONS = (10, 20, 60)

# Native Sentinel-2 resolutions, used when a caller only knows band names.
SENTINEL2_RESOLUTION = {
    "1": 60, "2": 10, "3": 10, "4": 10, "5": 20, "6": 20, "7": 20,
    "8": 10, "8A": 20, "9": 60, "10": 60, "11": 20, "12": 20,
}


class Label(IntEnum):
    UNLABELED = -1
    ENVIRONMENT = 0
    INFORMAL = 1


_PGM_TO_LABEL = {0: Label.UNLABELED, 128: Label.ENVIRONMENT, 255: Label.INFORMAL}


def normalize_band_id(band_id: Any) -> str:
    """Canonical string token for a band id (``8`` -> ``"8"``, ``"8a"`` -> ``"8A"``)."""
    token = str(band_id).strip().upper()
    if token.startswith("B"):
        token = token[1:]
    if token not in ("8A",):
        token = token.lstrip("0") or token
    if token not in BAND_IDS:
        raise RasterFormatError(f"unknown band_id {band_id!r}")
    return token


@dataclass(frozen=True)
class BandInfo:
    band_id: str
    native_resolution: int

    def __post_init__(self):
        object.__setattr__(self, "band_id", normalize_band_id(self.band_id))
        if self.native_resolution not in RESOLUTIONS:
            raise RasterFormatError(
                f"band {self.band_id}: native_resolution must be one of "
                f"{RESOLUTIONS}, got {self.native_resolution!r}"
            )

    def grid_shape(self, width: int, height: int) -> tuple[int, int]:
        """(rows, cols) of this band's grid for a 10 m reference grid of width x height."""
        factor = self.native_resolution // 10
        return math.ceil(height / factor), math.ceil(width / factor)


@dataclass(frozen=True, eq=False)
class MultiSpectralRaster:
    """Per-band reflectance grids on a shared 10 m reference extent.

    ``data`` holds one 2-D float32 array per band, shaped by the band's native
    resolution. Arrays are made read-only on construction.
    """

    width: int
    height: int
    bands: tuple[BandInfo, ...]
    data: tuple[np.ndarray, ...]
    nodata_value: float | None = None
    geotransform: Any = None

    def __post_init__(self):
        bands = tuple(self.bands)
        data = []
        if self.width < 1 or self.height < 1:
            raise RasterFormatError("raster dimensions must be positive")
        if len(bands) != len(self.data):
            raise RasterFormatError(
                f"{len(bands)} bands declared but {len(self.data)} grids given"
            )
        ids = [b.band_id for b in bands]
        if len(set(ids)) != len(ids):
            raise RasterFormatError(f"duplicate band_id in {ids}")
        nodata = self.nodata_value
        if nodata is not None:
            nodata = float(np.float32(nodata))
            if not math.isfinite(nodata):
                raise RasterFormatError("nodata sentinel must be finite")
        for band, grid in zip(bands, self.data):
            arr = np.array(grid, dtype=np.float32, copy=True)
            expected = band.grid_shape(self.width, self.height)
            if arr.shape != expected:
                raise RasterFormatError(
                    f"band {band.band_id}: grid shape {arr.shape}, expected {expected}"
                )
            if not np.isfinite(arr).all():
                raise RasterFormatError(f"band {band.band_id}: non-finite reflectance")
            arr.flags.writeable = False
            data.append(arr)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "data", tuple(data))
        object.__setattr__(self, "nodata_value", nodata)

    @property
    def band_ids(self) -> tuple[str, ...]:
        return tuple(b.band_id for b in self.bands)

    @property
    def on_common_grid(self) -> bool:
        return all(b.native_resolution == 10 for b in self.bands)

    def band(self, band_id) -> np.ndarray:
        return self.data[self.band_ids.index(normalize_band_id(band_id))]

    def stack(self) -> np.ndarray:
        """(n_bands, height, width) array; only valid on the common 10 m grid."""
        if not self.on_common_grid:
            raise DimensionMismatchError("bands are not on a common 10 m grid")
        return np.stack(self.data)

    def nodata_mask(self) -> np.ndarray:
        """Boolean (height, width) grid, True where any band holds the sentinel."""
        if self.nodata_value is None:
            return np.zeros((self.height, self.width), dtype=bool)
        return (self.stack() == np.float32(self.nodata_value)).any(axis=0)

    def __eq__(self, other):
        if not isinstance(other, MultiSpectralRaster):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.bands == other.bands
            and self.nodata_value == other.nodata_value
            and self.geotransform == other.geotransform
            and all(a.tobytes() == b.tobytes() for a, b in zip(self.data, other.data))
        )


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Ternary ground truth, stored as an int8 grid of :class:`Label` values."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.labels, dtype=np.int8, copy=True)
        if arr.ndim != 2:
            raise MaskFormatError("label grid must be 2-D")
        if not np.isin(arr, [-1, 0, 1]).all():
            raise MaskFormatError("labels must be UNLABELED, ENVIRONMENT or INFORMAL")
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class ClassMap:
    """Binary prediction map with an optional informal-class probability grid."""

    classes: np.ndarray
    probabilities: np.ndarray | None = None
    nodata_count: int = 0

    def __post_init__(self):
        classes = np.array(self.classes, dtype=np.uint8, copy=True)
        if classes.ndim != 2 or not np.isin(classes, [0, 1]).all():
            raise ValueError("classes must be a 2-D grid of 0/1")
        classes.flags.writeable = False
        object.__setattr__(self, "classes", classes)
        if self.probabilities is not None:
            prob = np.array(self.probabilities, dtype=np.float32, copy=True)
            if prob.shape != classes.shape:
                raise DimensionMismatchError("probability grid shape differs from classes")
            if not ((prob >= 0) & (prob <= 1)).all():
                raise ValueError("probabilities must lie in [0, 1]")
            if not np.array_equal(prob > 0.5, classes == 1):
                raise ValueError("classes disagree with probabilities (tie -> ENVIRONMENT)")
            prob.flags.writeable = False
            object.__setattr__(self, "probabilities", prob)

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]


# --------------------------------------------------------------------------
# raster container


def _parse_header(doc: Any) -> dict:
    if not isinstance(doc, dict):
        raise RasterFormatError("header must be a JSON object")
    try:
        width, height = doc["width"], doc["height"]
        band_docs = doc["bands"]
    except KeyError as exc:
        raise RasterFormatError(f"header missing field {exc.args[0]!r}") from None
    for name, value in (("width", width), ("height", height)):
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise RasterFormatError(f"header {name} must be a positive integer")
    if doc.get("dtype", DTYPE_TAG) != DTYPE_TAG:
        raise RasterFormatError(f"unsupported dtype {doc.get('dtype')!r}")
    if not isinstance(band_docs, list) or not band_docs:
        raise RasterFormatError("header bands must be a non-empty list")
    bands = []
    for entry in band_docs:
        if not isinstance(entry, dict) or "band_id" not in entry:
            raise RasterFormatError(f"malformed band entry {entry!r}")
        bands.append(BandInfo(entry["band_id"], entry.get("native_resolution", 10)))
    ids = [b.band_id for b in bands]
    if len(set(ids)) != len(ids):
        raise RasterFormatError(f"duplicate band_id in {ids}")
    nodata = doc.get("nodata")
    if nodata is not None and not isinstance(nodata, (int, float)):
        raise RasterFormatError("nodata must be a number")
    return dict(width=width, height=height, bands=bands, nodata=nodata,
                geotransform=doc.get("geotransform"))


def load_raster(path: str | os.PathLike) -> MultiSpectralRaster:
    """Read a raster container directory written by :func:`save_raster`."""
    path = Path(path)
    try:
        header_text = (path / HEADER_NAME).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise RasterFormatError(f"{path}: no {HEADER_NAME}") from None
    try:
        doc = json.loads(header_text)
    except json.JSONDecodeError as exc:
        raise RasterFormatError(f"{path / HEADER_NAME}: {exc}") from None
    hdr = _parse_header(doc)
    shapes = [b.grid_shape(hdr["width"], hdr["height"]) for b in hdr["bands"]]
    sizes = [r * c for r, c in shapes]
    try:
        payload = np.fromfile(path / PAYLOAD_NAME, dtype="<f4")
    except FileNotFoundError:
        raise RasterFormatError(f"{path}: no {PAYLOAD_NAME}") from None
    if payload.size != sum(sizes) or (path / PAYLOAD_NAME).stat().st_size != 4 * sum(sizes):
        raise RasterFormatError(
            f"payload holds {payload.size} floats, header declares {sum(sizes)}"
        )
    grids, offset = [], 0
    for shape, size in zip(shapes, sizes):
        grids.append(payload[offset:offset + size].reshape(shape).astype(np.float32))
        offset += size
    return MultiSpectralRaster(
        width=hdr["width"], height=hdr["height"], bands=tuple(hdr["bands"]),
        data=tuple(grids), nodata_value=hdr["nodata"], geotransform=hdr["geotransform"],
    )


def save_raster(raster: MultiSpectralRaster, path: str | os.PathLike) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    doc = {
        "width": raster.width,
        "height": raster.height,
        "bands": [{"band_id": b.band_id, "native_resolution": b.native_resolution}
                  for b in raster.bands],
        "dtype": DTYPE_TAG,
    }
    if raster.nodata_value is not None:
        doc["nodata"] = raster.nodata_value
    if raster.geotransform is not None:
        doc["geotransform"] = raster.geotransform
    (path / HEADER_NAME).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    with open(path / PAYLOAD_NAME, "wb") as fh:
        for grid in raster.data:
            fh.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


# --------------------------------------------------------------------------
# PGM


def _read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise MaskFormatError(f"{path}: not a binary PGM (P5) file")
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MaskFormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MaskFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise MaskFormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    body = raw[pos:]
    if len(body) != width * height:
        raise MaskFormatError(
            f"{path}: expected {width * height} pixel bytes, found {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def _write_pgm(path: Path, pixels: np.ndarray) -> None:
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def load_mask(path: str | os.PathLike) -> LabelMask:
    """Read a mask PGM: 0 unlabeled, 128 environment, 255 informal."""
    pixels = _read_pgm(Path(path))
    bad = ~np.isin(pixels, list(_PGM_TO_LABEL))
    if bad.any():
        values = sorted(set(pixels[bad].tolist()))
        raise MaskFormatError(f"{path}: invalid label values {values[:5]}")
    labels = np.full(pixels.shape, Label.UNLABELED, dtype=np.int8)
    labels[pixels == 128] = Label.ENVIRONMENT
    labels[pixels == 255] = Label.INFORMAL
    return LabelMask(labels)


def save_mask(mask: LabelMask, path: str | os.PathLike) -> None:
    pixels = np.zeros(mask.labels.shape, dtype=np.uint8)
    pixels[mask.labels == Label.ENVIRONMENT] = 128
    pixels[mask.labels == Label.INFORMAL] = 255
    _write_pgm(Path(path), pixels)


def probability_paths(path: str | os.PathLike) -> tuple[Path, Path]:
    """Header and payload locations of a class map's probability companion."""
    path = Path(path)
    return path.with_name(path.name + ".prob.json"), path.with_name(path.name + ".prob.bin")


def save_class_map(class_map: ClassMap, path: str | os.PathLike) -> None:
    """Write INFORMAL as 255 and ENVIRONMENT as 0.

    When probabilities are present they go to ``<path>.prob.bin`` (float32
    little-endian, row-major) described by ``<path>.prob.json``.
    """
    path = Path(path)
    _write_pgm(path, class_map.classes * np.uint8(255))
    if class_map.probabilities is not None:
        header, payload = probability_paths(path)
        doc = {"width": class_map.width, "height": class_map.height, "dtype": DTYPE_TAG,
               "nodata_count": int(class_map.nodata_count)}
        header.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        payload.write_bytes(np.ascontiguousarray(class_map.probabilities, dtype="<f4").tobytes())


def load_class_map(path: str | os.PathLike) -> ClassMap:
    path = Path(path)
    pixels = _read_pgm(path)
    if not np.isin(pixels, [0, 255]).all():
        raise MaskFormatError(f"{path}: class map pixels must be 0 or 255")
    classes = (pixels == 255).astype(np.uint8)
    header, payload = probability_paths(path)
    prob = None
    nodata_count = 0
    if header.exists():
        doc = json.loads(header.read_text(encoding="utf-8"))
        if (doc.get("width"), doc.get("height")) != (classes.shape[1], classes.shape[0]):
            raise DimensionMismatchError(f"{header}: size differs from class map")
        values = np.fromfile(payload, dtype="<f4")
        if values.size != classes.size:
            raise MaskFormatError(f"{payload}: expected {classes.size} floats")
        prob = values.reshape(classes.shape)
        nodata_count = int(doc.get("nodata_count", 0))
    return ClassMap(classes, prob, nodata_count)


def check_alignment(raster: MultiSpectralRaster, mask: LabelMask) -> None:
    """Raise unless the mask covers exactly the raster's 10 m grid."""
    if (mask.height, mask.width) != (raster.height, raster.width):
        raise DimensionMismatchError(
            f"mask is {mask.width}x{mask.height}, raster grid is "
            f"{raster.width}x{raster.height}"
        )


def make_raster(stack: np.ndarray, band_ids: Sequence | None = None,
                nodata_value=None) -> MultiSpectralRaster:
    """Convenience constructor from a (n_bands, height, width) array on the 10 m grid."""
    stack = np.asarray(stack, dtype=np.float32)
    if stack.ndim != 3:
        raise ValueError("stack must be (n_bands, height, width)")
    n_bands, height, width = stack.shape
    if band_ids is None:
        band_ids = BAND_IDS[:n_bands]
    bands = tuple(BandInfo(b, 10) for b in band_ids)
    return MultiSpectralRaster(width, height, bands, tuple(stack), nodata_value)
