"""Sample-level image realism scoring.

Scores a test image by how closely its deep-network activations sit to
those of a reference set of training images: per layer, the sum over
spatial locations of the exact nearest-neighbor L2 distance against a
subsampled reference pool, then a logistic regression from those
per-layer distances to the probability that a human rater would call
the image real.
"""

from .atn import (
    ActivationBundle,
    ActivationTensor,
    read_bundle,
    read_tensor,
    write_bundle,
    write_tensor,
)
from .errors import (
    DataError,
    FormatError,
    IdMismatchError,
    LayerMismatchError,
    RealismError,
)
from .estimators import NearestNeighborFeaturizer, RealismScorer
from .evaluation import (
    EvalReport,
    LabelRecord,
    SplitSpec,
    binary_accuracy,
    evaluate,
    format_grid,
    spearman_rho,
    split,
)
from .features import FeatureVector, featurize, layer_feature, nn_distance
from .pools import PoolConfig, ReferencePool, build_pool, load_pool, save_pool
from .regression import (
    RealismModel,
    TrainSet,
    fit,
    load_model,
    predict_label,
    predict_proba,
    save_model,
    standardize,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationBundle",
    "ActivationTensor",
    "DataError",
    "EvalReport",
    "FeatureVector",
    "FormatError",
    "IdMismatchError",
    "LabelRecord",
    "LayerMismatchError",
    "NearestNeighborFeaturizer",
    "PoolConfig",
    "RealismError",
    "RealismModel",
    "RealismScorer",
    "ReferencePool",
    "SplitSpec",
    "TrainSet",
    "binary_accuracy",
    "build_pool",
    "evaluate",
    "featurize",
    "fit",
    "format_grid",
    "layer_feature",
    "load_model",
    "load_pool",
    "nn_distance",
    "predict_label",
    "predict_proba",
    "read_bundle",
    "read_tensor",
    "save_model",
    "save_pool",
    "spearman_rho",
    "split",
    "standardize",
    "write_bundle",
    "write_tensor",
]
