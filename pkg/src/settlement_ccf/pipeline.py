"""End-to-end runs: synth -> train -> predict -> evaluate -> cross-evaluate.

Each ``run_*`` function is what the matching CLI subcommand calls. Failures
are re-raised as :class:`StageError`, which names the stage and carries the
process exit code (2 input, 3 model/data incompatibility, 4 numerical).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .errors import (
    BandMismatchError,
    DimensionMismatchError,
    InputError,
    NumericalError,
)
from .forest import Forest, ForestConfig, predict_map, train_forest
from .metrics import (
    EvalReport,
    appendix_tables,
    evaluate,
    write_report_csv,
    write_report_json,
    write_table_csv,
)
from .modelfile import deserialize_forest, serialize_forest
from .raster import check_alignment, load_mask, load_raster, save_class_map, save_mask, save_raster
from .sampling import DEFAULT_BANDS, apply_standardizer, fit_standardizer, prepare_datasets
from .synth import generate_scene, load_scene_spec

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INCOMPATIBLE = 3
EXIT_NUMERICAL = 4


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException, exit_code: int):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = exit_code


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, BandMismatchError):
        return EXIT_INCOMPATIBLE
    if isinstance(exc, (NumericalError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    return EXIT_INPUT


@contextmanager
def stage(name: str, incompatible: tuple = ()):
    """Tag any failure inside the block with the stage name and an exit code."""
    try:
        yield
    except StageError:
        raise
    except incompatible as exc:
        raise StageError(name, exc, EXIT_INCOMPATIBLE) from exc
    except (OSError, ValueError, ArithmeticError, np.linalg.LinAlgError, KeyError) as exc:
        raise StageError(name, exc, exit_code_for(exc)) from exc


# --------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    """One region's run definition.

    Relative paths in a config file resolve against the file's directory.
    """

    region: str
    raster: str
    mask: str
    out: str = "out"
    bands: tuple = DEFAULT_BANDS
    train_fraction: float = 0.8
    seed: int = 0
    forest: ForestConfig = field(default_factory=ForestConfig)
    base_dir: str = "."

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "raster": self.raster,
            "mask": self.mask,
            "bands": list(self.bands),
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "forest": asdict(self.forest),
        }


_FOREST_KEYS = {"n_trees", "min_node_size", "max_depth", "ridge"}
_TOP_KEYS = {"region", "raster", "mask", "out", "bands", "train_fraction", "seed", "forest"}


def load_config(path: str | os.PathLike | None = None, *, seed: int | None = None,
                trees: int | None = None, out: str | None = None, **overrides) -> PipelineConfig:
    """Read a YAML run definition; keyword arguments override file values."""
    doc: dict = {}
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise InputError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError(f"{path}: config must be a mapping")
        base_dir = path.parent
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise InputError(f"unknown config keys {sorted(unknown)}")
    forest_doc = dict(doc.pop("forest", None) or {})
    bad = set(forest_doc) - _FOREST_KEYS
    if bad:
        raise InputError(f"unknown forest keys {sorted(bad)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if out is not None:
        # flag values are relative to the caller, not the config file
        doc["out"] = str(Path(out).resolve())
    if seed is not None:
        doc["seed"] = seed
    if trees is not None:
        forest_doc["n_trees"] = trees
    for key in ("region", "raster", "mask"):
        if key not in doc:
            raise InputError(f"config is missing required key {key!r}")
    run_seed = int(doc.get("seed", 0))
    try:
        forest = ForestConfig(seed=run_seed, **forest_doc)
    except TypeError as exc:
        raise InputError(str(exc)) from None
    return PipelineConfig(
        region=str(doc["region"]),
        raster=str(doc["raster"]),
        mask=str(doc["mask"]),
        out=str(doc.get("out", "out")),
        bands=tuple(str(b) for b in doc.get("bands", DEFAULT_BANDS)),
        train_fraction=float(doc.get("train_fraction", 0.8)),
        seed=run_seed,
        forest=forest,
        base_dir=str(base_dir),
    )


def _sha256(*paths: Path) -> str:
    digest = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


def manifest(command: str, **fields) -> dict:
    """Reproducibility record: versions plus whatever identifies the inputs."""
    return {
        "command": command,
        "tool": "settlement-ccf",
        "versions": {"settlement_ccf": __version__, "numpy": np.__version__},
        **fields,
    }


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# runs


@dataclass
class TrainResult:
    forest: Forest
    report: EvalReport
    model_path: Path
    out_dir: Path


def load_region(config: PipelineConfig):
    """Raster + mask for one config, alignment checked before any sampling."""
    raster_path, mask_path = config.resolve(config.raster), config.resolve(config.mask)
    with stage("load_raster"):
        if not raster_path.exists():
            raise FileNotFoundError(f"raster not found: {raster_path}")
        raster = load_raster(raster_path)
    with stage("load_mask"):
        if not mask_path.exists():
            raise FileNotFoundError(f"mask not found: {mask_path}")
        mask = load_mask(mask_path)
    with stage("pair"):
        check_alignment(raster, mask)
    return raster, mask


def region_splits(config: PipelineConfig):
    raster, mask = load_region(config)
    with stage("sample", incompatible=(BandMismatchError,)):
        return prepare_datasets(raster, mask, band_ids=config.bands,
                                train_fraction=config.train_fraction,
                                seed=config.seed, region=config.region)


def run_train(config: PipelineConfig, n_jobs: int | None = None) -> TrainResult:
    """Sample, standardize, train and evaluate on the held-out split; write outputs."""
    train, test = region_splits(config)
    log.info("%s: %d train / %d test rows", config.region, len(train), len(test))
    with stage("standardize"):
        standardizer = fit_standardizer(train)
        train_std = apply_standardizer(standardizer, train)
        if standardizer.zero_variance.any():
            log.warning("zero-variance bands: %s",
                        [b for b, z in zip(train.band_ids, standardizer.zero_variance) if z])
    with stage("train"):
        forest = train_forest(train_std, config.forest, standardizer, n_jobs=n_jobs)
    with stage("evaluate"):
        report = evaluate(forest, test, config.region, config.region)

    run_manifest = manifest(
        "train",
        config=config.to_dict(),
        seed=config.seed,
        inputs=_input_digests(config),
        counts={"train": len(train), "test": len(test), "nodata_dropped": train.n_dropped},
    )
    forest.metadata = {"region": config.region, "manifest": run_manifest}
    out_dir = config.resolve(config.out)
    with stage("write_outputs"):
        out_dir.mkdir(parents=True, exist_ok=True)
        model_path = out_dir / "model.json"
        serialize_forest(forest, model_path)
        write_report_json(report, out_dir / "report.json", {"manifest": run_manifest})
        write_report_csv(report, out_dir / "report.csv")
        _write_json(run_manifest, out_dir / "manifest.json")
    log.info("%s: held-out pixel accuracy %.4f, mean IoU %.4f",
             config.region, report.pixel_accuracy, report.mean_iou)
    return TrainResult(forest, report, model_path, out_dir)


def _input_digests(config: PipelineConfig) -> dict:
    raster_dir = config.resolve(config.raster)
    return {
        "raster": {"path": config.raster,
                   "sha256": _sha256(raster_dir / "header.json", raster_dir / "bands.bin")},
        "mask": {"path": config.mask, "sha256": _sha256(config.resolve(config.mask))},
    }


def run_predict(model_path, raster_path, out_path):
    """Write the class-map PGM and its probability companion; returns the ClassMap."""
    with stage("load_model"):
        forest = deserialize_forest(model_path)
    with stage("load_raster"):
        raster = load_raster(raster_path)
    with stage("predict", incompatible=(DimensionMismatchError,)):
        class_map = predict_map(forest, raster)
    out_path = Path(out_path)
    with stage("write_outputs"):
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_class_map(class_map, out_path)
        _write_json(manifest("predict", model={"path": str(model_path),
                                               "sha256": _sha256(Path(model_path))},
                             raster=str(raster_path), nodata_count=class_map.nodata_count),
                    out_path.with_name(out_path.name + ".manifest.json"))
    total = class_map.width * class_map.height
    if class_map.nodata_count == total:
        log.warning("every pixel is nodata; map is all ENVIRONMENT")
    elif class_map.nodata_count:
        log.info("%d nodata pixels set to ENVIRONMENT", class_map.nodata_count)
    log.info("informal fraction %.4f", float(class_map.classes.mean()))
    return class_map


def _model_name(forest: Forest, path: Path) -> str:
    return str(forest.metadata.get("region") or Path(path).stem)


def run_crosseval(model_paths: Sequence, dataset_configs: Sequence, out_dir,
                  seed: int | None = None):
    """Every model against every dataset's held-out split.

    Failures are recorded per cell (a broken model fails its row, a broken
    dataset its column) and the run continues. Raises :class:`StageError`
    only if no cell could be evaluated.
    """
    models: dict[str, object] = {}
    for i, path in enumerate(model_paths):
        try:
            with stage("load_model"):
                forest = deserialize_forest(path)
            models[_model_name(forest, path)] = forest
        except StageError as exc:
            log.warning("model %s: %s", path, exc)
            models[Path(path).stem or f"model{i}"] = exc

    datasets: dict[str, object] = {}
    for i, cfg_path in enumerate(dataset_configs):
        try:
            cfg = cfg_path if isinstance(cfg_path, PipelineConfig) else load_config(cfg_path, seed=seed)
            name = cfg.region
            _, test = region_splits(cfg)
            datasets[name] = test
        except (StageError, InputError) as exc:
            name = Path(str(cfg_path)).stem if not isinstance(cfg_path, PipelineConfig) else cfg_path.region
            log.warning("dataset %s: %s", cfg_path, exc)
            datasets[name or f"dataset{i}"] = exc

    grid: dict[str, dict[str, object]] = {}
    n_ok = 0
    for m_name, model in models.items():
        row = grid.setdefault(m_name, {})
        for d_name, data in datasets.items():
            if isinstance(model, Exception):
                row[d_name] = model
            elif isinstance(data, Exception):
                row[d_name] = data
            else:
                try:
                    with stage("evaluate", incompatible=(DimensionMismatchError,)):
                        row[d_name] = evaluate(model, data, m_name, d_name)
                    n_ok += 1
                except StageError as exc:
                    log.warning("cell %s x %s: %s", m_name, d_name, exc)
                    row[d_name] = exc

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = appendix_tables(grid)
    run_manifest = manifest("crosseval", models=[str(p) for p in model_paths],
                            datasets=[str(p) for p in dataset_configs])
    write_report_json(grid, out_dir / "crosseval.json", {"manifest": run_manifest})
    write_report_csv(grid, out_dir / "crosseval.csv")
    write_table_csv(tables["accuracy"], out_dir / "accuracy_table.csv")
    write_table_csv(tables["iou"], out_dir / "iou_table.csv")
    _write_json({"manifest": run_manifest, **tables}, out_dir / "tables.json")
    if n_ok == 0:
        raise StageError("crosseval", InputError("no model/dataset pair could be evaluated"),
                         EXIT_INPUT)
    return grid


def run_synth(spec_path, out_dir, seed: int | None = None):
    """Write ``raster/``, ``mask.pgm`` and a ready-to-train ``dataset.yaml``."""
    with stage("load_spec"):
        spec = load_scene_spec(spec_path)
        if seed is not None:
            spec = replace(spec, seed=int(seed))
    with stage("generate"):
        raster, mask = generate_scene(spec)
    out_dir = Path(out_dir)
    with stage("write_outputs"):
        out_dir.mkdir(parents=True, exist_ok=True)
        save_raster(raster, out_dir / "raster")
        save_mask(mask, out_dir / "mask.pgm")
        dataset = {"region": out_dir.name, "raster": "raster", "mask": "mask.pgm",
                   "seed": spec.seed}
        (out_dir / "dataset.yaml").write_text(yaml.safe_dump(dataset, sort_keys=True),
                                              encoding="utf-8")
        _write_json(manifest("synth", spec=str(spec_path), seed=spec.seed),
                    out_dir / "manifest.json")
    return raster, mask
