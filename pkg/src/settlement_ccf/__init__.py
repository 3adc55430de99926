"""Informal-settlement mapping with canonical correlation forests.

Pixel-wise binary classification (environment vs informal settlement) of
multi-spectral rasters such as Sentinel-2 Level-1C top-of-atmosphere
reflectances.
"""

__version__ = "0.1.0"

from .cca import CcaResult, compute_cca, one_hot
from .forest import (
    CcTree,
    Forest,
    ForestConfig,
    gini_gain,
    gini_impurity,
    grow_tree,
    predict_class,
    predict_map,
    train_forest,
)
from .metrics import (
    ConfusionMatrix,
    EvalReport,
    confusion_matrix,
    cross_region_matrix,
    evaluate,
    iou,
    pixel_accuracy,
)
from .modelfile import deserialize_forest, serialize_forest
from .raster import (
    BandInfo,
    ClassMap,
    Label,
    LabelMask,
    MultiSpectralRaster,
    load_mask,
    load_raster,
    save_class_map,
    save_mask,
    save_raster,
)
from .sampling import (
    DEFAULT_BANDS,
    PixelDataset,
    Standardizer,
    apply_standardizer,
    balance_classes,
    extract_labeled_pixels,
    fit_standardizer,
    resample_to_common_grid,
    select_bands,
    split_train_test,
)
from .synth import (
    SceneSpec,
    benchmark_scene,
    brute_force_cca,
    generate_scene,
    nearest_centroid_oracle,
)

__all__ = [
    "__version__",
    "CcaResult",
    "compute_cca",
    "one_hot",
    "CcTree",
    "Forest",
    "ForestConfig",
    "gini_gain",
    "gini_impurity",
    "grow_tree",
    "predict_class",
    "predict_map",
    "train_forest",
    "ConfusionMatrix",
    "EvalReport",
    "confusion_matrix",
    "cross_region_matrix",
    "evaluate",
    "iou",
    "pixel_accuracy",
    "deserialize_forest",
    "serialize_forest",
    "BandInfo",
    "ClassMap",
    "Label",
    "LabelMask",
    "MultiSpectralRaster",
    "load_mask",
    "load_raster",
    "save_class_map",
    "save_mask",
    "save_raster",
    "DEFAULT_BANDS",
    "PixelDataset",
    "Standardizer",
    "apply_standardizer",
    "balance_classes",
    "extract_labeled_pixels",
    "fit_standardizer",
    "resample_to_common_grid",
    "select_bands",
    "split_train_test",
    "SceneSpec",
    "brute_force_cca",
    "generate_scene",
    "nearest_centroid_oracle",
    "benchmark_scene",
]
