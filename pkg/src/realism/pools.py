"""Per-layer reference pools of activation vectors.

A pool is a subsample of the C-dimensional activation vectors found at
every spatial location of every training image at one layer; test
images are scored by nearest-neighbor distance against it. Pools are
capped (default 10,000 vectors) and drawn without replacement with the
portable seeded generator from :mod:`realism.rng`, so the same inputs
and seed always produce the same pool, regardless of the order bundles
are supplied in.

Two sampling scopes exist:

* pooled (default): one candidate multiset per layer, spanning all
  images and all spatial locations.
* location-matched: one candidate set per spatial location (u, v),
  holding only the vectors other images have at that same location;
  the per-layer cap is divided evenly across locations.

Pool files are a small ``key=value`` text header followed by the raw
vectors as an ATN1 payload of shape 1 x K x C.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .atn import tensor_from_bytes, tensor_to_bytes, ActivationTensor
from .config import DEFAULT_LAYERS, DEFAULT_POOL_CAP, DEFAULT_SEED
from .errors import DataError, FormatError
from .validation import check_identifier

POOL_MAGIC = "ATNPOOL1"
_PAYLOAD_MARK = b"payload=atn1\n"


@dataclass
class PoolConfig:
    """Settings for building reference pools."""

    pool_cap: int = DEFAULT_POOL_CAP
    seed: int = DEFAULT_SEED
    layers: tuple = DEFAULT_LAYERS
    location_matched: bool = False

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if self.pool_cap < 1:
            raise DataError(f"pool cap must be >= 1, got {self.pool_cap}")
        if not self.layers:
            raise DataError("layer list must be non-empty")


@dataclass(eq=False)
class ReferencePool:
    """Frozen set of reference vectors for one layer.

    ``vectors`` is (K, C) float32, read-only. For location-matched
    pools, ``grid`` is the (W, H) it was built on and vectors are
    stored as W*H consecutive blocks of ``per_location`` vectors, in
    row-major location order; both are None for pooled sampling.
    """

    layer_name: str
    vectors: np.ndarray
    source_count: int
    seed: int
    grid: tuple | None = None
    per_location: int | None = None

    def __post_init__(self):
        check_identifier(self.layer_name, "layer name")
        arr = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise DataError(f"pool vectors must be (K, C), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"pool for layer {self.layer_name!r} contains NaN/Inf")
        arr.flags.writeable = False
        self.vectors = arr
        if (self.grid is None) != (self.per_location is None):
            raise DataError("grid and per_location must be set together")
        if self.grid is not None:
            w, h = self.grid
            self.grid = (int(w), int(h))
            if w * h * self.per_location != len(arr):
                raise DataError(
                    f"location-matched pool size {len(arr)} does not equal "
                    f"grid {w}x{h} times per-location count {self.per_location}"
                )

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def channels(self) -> int:
        return self.vectors.shape[1]

    @property
    def location_matched(self) -> bool:
        return self.grid is not None

    def location_block(self, u: int, v: int) -> np.ndarray:
        """Vectors restricted to spatial location (u, v), 0-based."""
        if self.grid is None:
            raise DataError("pool is not location-matched")
        w, h = self.grid
        if not (0 <= u < w and 0 <= v < h):
            raise DataError(f"location ({u}, {v}) outside grid {self.grid}")
        k = self.per_location
        start = (u * h + v) * k
        return self.vectors[start : start + k]


def _collect_layer_tensors(bundles, layer: str):
    """Pull one layer's tensor out of every bundle, sorted by image id."""
    items = []
    for bundle in bundles:
        items.append((bundle.image_id, bundle.tensor(layer)))
    if not items:
        raise DataError(f"no bundles supplied for layer {layer!r}")
    items.sort(key=lambda kv: kv[0])
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate image id among bundles for layer {layer!r}")
    channels = items[0][1].channels
    for image_id, tensor in items:
        if tensor.channels != channels:
            raise DataError(
                f"inconsistent channel count for layer {layer!r}: "
                f"{channels} vs {tensor.channels} (image {image_id!r})"
            )
    return items, channels


def build_pool(bundles, layer: str, config: PoolConfig) -> ReferencePool:
    """Build one layer's reference pool from training bundles.

    Candidates are every location vector of every image, ordered by
    (image id, u, v). If there are at most ``pool_cap`` of them the
    pool is all candidates in that order; otherwise ``pool_cap`` are
    drawn uniformly without replacement with the seeded generator and
    kept in ascending candidate order.
    """
    from .rng import SplitMix64

    items, channels = _collect_layer_tensors(bundles, layer)
    if config.location_matched:
        return _build_location_matched(items, layer, channels, config)

    candidates = np.concatenate(
        [tensor.location_vectors() for _, tensor in items], axis=0
    )
    count = candidates.shape[0]
    if count <= config.pool_cap:
        chosen = candidates
    else:
        gen = SplitMix64(config.seed)
        idx = sorted(gen.sample_without_replacement(count, config.pool_cap))
        chosen = candidates[idx]
    return ReferencePool(
        layer_name=layer,
        vectors=chosen,
        source_count=len(items),
        seed=config.seed,
    )


def _build_location_matched(items, layer, channels, config) -> ReferencePool:
    from .rng import SplitMix64

    shapes = {(t.width, t.height) for _, t in items}
    if len(shapes) != 1:
        raise DataError(
            f"location-matched pool needs one spatial shape for layer "
            f"{layer!r}, got {sorted(shapes)}"
        )
    (w, h) = shapes.pop()
    n = len(items)
    per_loc = min(n, max(1, config.pool_cap // (w * h)))
    stack = np.stack([t.data for _, t in items])  # (n, W, H, C)
    gen = SplitMix64(config.seed)
    blocks = []
    for u in range(w):
        for v in range(h):
            vecs = stack[:, u, v, :]
            if per_loc == n:
                blocks.append(vecs)
            else:
                idx = sorted(gen.sample_without_replacement(n, per_loc))
                blocks.append(vecs[idx])
    return ReferencePool(
        layer_name=layer,
        vectors=np.concatenate(blocks, axis=0),
        source_count=n,
        seed=config.seed,
        grid=(w, h),
        per_location=per_loc,
    )


def save_pool(path, pool: ReferencePool) -> None:
    """Write a pool file; load_pool inverts it exactly."""
    lines = [
        POOL_MAGIC,
        f"layer={pool.layer_name}",
        f"channels={pool.channels}",
        f"count={pool.size}",
        f"source_count={pool.source_count}",
        f"seed={pool.seed}",
        f"location_matched={1 if pool.location_matched else 0}",
    ]
    if pool.location_matched:
        w, h = pool.grid
        lines += [f"grid_w={w}", f"grid_h={h}", f"per_location={pool.per_location}"]
    header = "\n".join(lines).encode("ascii") + b"\n" + _PAYLOAD_MARK
    payload = tensor_to_bytes(
        ActivationTensor(pool.layer_name, pool.vectors.reshape(1, pool.size, -1))
    )
    Path(path).write_bytes(header + payload)


def _parse_header_int(fields, key, path):
    if key not in fields:
        raise FormatError(f"pool file {path} missing header key {key!r}")
    try:
        return int(fields[key])
    except ValueError:
        raise FormatError(f"pool file {path}: {key} is not an integer")


def load_pool(path) -> ReferencePool:
    """Read a pool file written by save_pool."""
    path = Path(path)
    buf = path.read_bytes()
    mark = buf.find(_PAYLOAD_MARK)
    if mark < 0:
        raise FormatError(f"pool file {path} has no payload marker")
    try:
        head = buf[:mark].decode("ascii")
    except UnicodeDecodeError:
        raise FormatError(f"pool file {path} header is not ASCII")
    lines = head.splitlines()
    if not lines or lines[0] != POOL_MAGIC:
        raise FormatError(f"pool file {path}: bad magic")
    fields = {}
    for line in lines[1:]:
        if "=" not in line:
            raise FormatError(f"pool file {path}: bad header line {line!r}")
        key, value = line.split("=", 1)
        fields[key] = value
    layer = fields.get("layer")
    if not layer:
        raise FormatError(f"pool file {path} missing layer name")
    channels = _parse_header_int(fields, "channels", path)
    count = _parse_header_int(fields, "count", path)
    source_count = _parse_header_int(fields, "source_count", path)
    seed = _parse_header_int(fields, "seed", path)
    matched = _parse_header_int(fields, "location_matched", path)
    payload = buf[mark + len(_PAYLOAD_MARK) :]
    tensor = tensor_from_bytes(payload, layer)
    if tensor.data.shape != (1, count, channels):
        raise FormatError(
            f"pool file {path}: payload shape {tensor.data.shape} does not "
            f"match header (1, {count}, {channels})"
        )
    grid = per_location = None
    if matched:
        grid = (
            _parse_header_int(fields, "grid_w", path),
            _parse_header_int(fields, "grid_h", path),
        )
        per_location = _parse_header_int(fields, "per_location", path)
    return ReferencePool(
        layer_name=layer,
        vectors=tensor.data.reshape(count, channels),
        source_count=source_count,
        seed=seed,
        grid=grid,
        per_location=per_location,
    )


def pool_path(root, layer_name: str) -> Path:
    return Path(root) / f"{layer_name}.pool"
