"""Nearest-neighbor distance features over reference pools.

One layer's feature for a test image is the sum over its W*H spatial
locations of the Euclidean distance from that location's C-dimensional
activation vector to the nearest vector in the layer's reference pool;
a fully-connected layer is the W = H = 1 special case. Scoring against
m layers yields an m-dimensional feature vector per image. Small
distances mean the image activates the network like the reference
(training) images do.

Numerics: tensors and pools are stored in float32 but all distance
arithmetic runs in float64. The inner loop compares squared distances
and takes a single square root per location (the minimum commutes with
the square for nonnegative values). Locations are accumulated in
row-major order (u outer, v middle) so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atn import ActivationBundle, ActivationTensor
from .errors import DataError, FormatError, LayerMismatchError
from .pools import ReferencePool
from .validation import check_identifier

AGGREGATES = ("sum", "mean")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Per-image aggregated NN distances, one float64 per layer."""

    image_id: str
    values: np.ndarray

    def __post_init__(self):
        check_identifier(self.image_id, "image id")
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise DataError(f"feature values must be a non-empty vector, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"features for {self.image_id!r} contain NaN/Inf")
        if np.any(arr < 0.0):
            raise DataError(f"features for {self.image_id!r} contain negative distances")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]


def _min_sqdist(query64: np.ndarray, vectors64: np.ndarray) -> float:
    diff = vectors64 - query64
    sq = np.einsum("kc,kc->k", diff, diff)
    return float(sq.min())


def nn_distance(query, pool: ReferencePool, location: tuple | None = None) -> float:
    """Exact L2 distance from a C-vector to its nearest pool vector.

    For location-matched pools the query's spatial location (u, v) must
    be given so the search is restricted to that location's block.
    """
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != pool.channels:
        raise DataError(
            f"query has {q.shape[0]} channels, pool {pool.layer_name!r} "
            f"has {pool.channels}"
        )
    if pool.location_matched:
        if location is None:
            raise DataError(
                f"pool {pool.layer_name!r} is location-matched; a query "
                "location (u, v) is required"
            )
        vectors = pool.location_block(*location)
    else:
        vectors = pool.vectors
    return float(np.sqrt(_min_sqdist(q, np.asarray(vectors, dtype=np.float64))))


def layer_feature(
    tensor: ActivationTensor, pool: ReferencePool, aggregate: str = "sum"
) -> float:
    """Aggregate NN distance of one activation tensor against one pool.

    Sums the per-location nearest-neighbor distances in row-major
    order; ``aggregate="mean"`` divides the sum by W*H. For W = H = 1
    both equal the single location's distance.
    """
    if aggregate not in AGGREGATES:
        raise DataError(f"aggregate must be one of {AGGREGATES}, got {aggregate!r}")
    if tensor.channels != pool.channels:
        raise LayerMismatchError(
            f"tensor {tensor.layer_name!r} has {tensor.channels} channels, "
            f"pool {pool.layer_name!r} has {pool.channels}"
        )
    locations = np.asarray(tensor.location_vectors(), dtype=np.float64)
    if pool.location_matched:
        if (tensor.width, tensor.height) != pool.grid:
            raise LayerMismatchError(
                f"tensor grid {(tensor.width, tensor.height)} does not match "
                f"location-matched pool grid {pool.grid}"
            )
        blocks64 = np.asarray(pool.vectors, dtype=np.float64)
        k = pool.per_location
        total = 0.0
        for loc in range(locations.shape[0]):
            block = blocks64[loc * k : (loc + 1) * k]
            total += float(np.sqrt(_min_sqdist(locations[loc], block)))
    else:
        vectors64 = np.asarray(pool.vectors, dtype=np.float64)
        total = 0.0
        for loc in range(locations.shape[0]):
            total += float(np.sqrt(_min_sqdist(locations[loc], vectors64)))
    if aggregate == "mean":
        total /= locations.shape[0]
    return total


def featurize(
    bundle: ActivationBundle, pools, aggregate: str = "sum"
) -> FeatureVector:
    """Score one image bundle against per-layer pools.

    Bundle layers and pools must agree in names, order, and channel
    count; value j is layer_feature of the j-th pair.
    """
    pools = list(pools)
    if len(bundle.tensors) != len(pools):
        raise LayerMismatchError(
            f"bundle {bundle.image_id!r} has {len(bundle.tensors)} layers, "
            f"got {len(pools)} pools"
        )
    values = np.empty(len(pools), dtype=np.float64)
    for j, (tensor, pool) in enumerate(zip(bundle.tensors, pools)):
        if tensor.layer_name != pool.layer_name:
            raise LayerMismatchError(
                f"layer order mismatch at position {j}: bundle has "
                f"{tensor.layer_name!r}, pool is {pool.layer_name!r}"
            )
        values[j] = layer_feature(tensor, pool, aggregate=aggregate)
    return FeatureVector(bundle.image_id, values)


def write_features_csv(path, layer_names, feature_vectors) -> None:
    """Write features as CSV: header image_id,<layers>; 9 significant digits."""
    layer_names = list(layer_names)
    lines = ["image_id," + ",".join(layer_names)]
    for fv in feature_vectors:
        if len(fv) != len(layer_names):
            raise LayerMismatchError(
                f"feature vector for {fv.image_id!r} has {len(fv)} values, "
                f"expected {len(layer_names)}"
            )
        lines.append(fv.image_id + "," + ",".join(f"{v:.9g}" for v in fv.values))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_features_csv(path):
    """Read a features CSV; returns (layer_names, feature_vectors)."""
    with open(path, "r", newline="") as fh:
        lines = [line.rstrip("\n").rstrip("\r") for line in fh]
    lines = [line for line in lines if line]
    if not lines:
        raise FormatError(f"features file {path} is empty")
    header = lines[0].split(",")
    if len(header) < 2 or header[0] != "image_id":
        raise FormatError(
            f"features file {path}: header must be image_id,<layer>,... "
            f"got {lines[0]!r}"
        )
    layer_names = tuple(header[1:])
    vectors = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise FormatError(
                f"features file {path}:{lineno}: expected {len(header)} "
                f"columns, got {len(parts)}"
            )
        image_id = parts[0]
        if image_id in seen:
            raise DataError(f"features file {path}: duplicate image id {image_id!r}")
        seen.add(image_id)
        try:
            values = np.array([float(p) for p in parts[1:]], dtype=np.float64)
        except ValueError:
            raise FormatError(f"features file {path}:{lineno}: non-numeric value")
        vectors.append(FeatureVector(image_id, values))
    return layer_names, vectors
