"""Texture-based script identification.

The pipeline turns document images into thresholded local binary pattern
histograms, trains a small dense network on them, and classifies either
from the output layer or by nearest-neighbour search over hidden layer
activations, which transfers to classes the network never saw.

Modules:
    imagecore   decoding, PCA graying, polarity normalization
    srslbp      ring sampling, Otsu-split codes, zone histograms
    dataset     manifests, feature stores, grouped folds
    mlp         dense network, training loop, model files
    metricknn   exact nearest-neighbour routes over activations
    evalrep     confusion matrices, reports, figures
    cli         command-line pipeline driver
"""

from .dataset import (
    FeatureStore,
    Manifest,
    extract_store,
    load_manifest,
    make_group_folds,
    read_features,
    write_features,
)
from .errors import (
    ConfigError,
    DecodeError,
    FormatError,
    ManifestError,
    ScriptaError,
    UnsupportedFormatError,
)
from .evalrep import EvalReport, aggregate_folds, confusion, render_report, summarize
from .imagecore import GrayImage, RasterImage, decode_image, load_image, preprocess
from .metricknn import (
    CrossDomainResult,
    build_index,
    classify,
    cross_domain_eval,
    evaluate_layerwise,
    knn_predict,
)
from .mlp import (
    MlpModel,
    TrainConfig,
    TrainingHistory,
    init_model,
    load_model,
    save_model,
    train,
)
from .srslbp import config_digest, extract_features, otsu_threshold, srs_code_map

__version__ = "1.0.0"

__all__ = [
    "ConfigError",
    "CrossDomainResult",
    "DecodeError",
    "EvalReport",
    "FeatureStore",
    "FormatError",
    "GrayImage",
    "Manifest",
    "ManifestError",
    "MlpModel",
    "RasterImage",
    "ScriptaError",
    "TrainConfig",
    "TrainingHistory",
    "UnsupportedFormatError",
    "aggregate_folds",
    "build_index",
    "classify",
    "config_digest",
    "confusion",
    "cross_domain_eval",
    "decode_image",
    "evaluate_layerwise",
    "extract_features",
    "extract_store",
    "init_model",
    "knn_predict",
    "load_image",
    "load_manifest",
    "load_model",
    "make_group_folds",
    "otsu_threshold",
    "preprocess",
    "read_features",
    "render_report",
    "save_model",
    "srs_code_map",
    "summarize",
    "train",
    "write_features",
]
