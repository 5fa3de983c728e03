"""Bit-exact reading and writing of activation tensors (ATN1 files).

File layout, little-endian throughout:

    bytes 0-3    magic, ASCII "ATN1"
    byte  4      dtype code (0x01 = float32; anything else rejected)
    byte  5      ndim (always 3)
    bytes 6-17   three uint32 dims, order W, H, C
    bytes 18+    W*H*C float32 values, row-major (u outer, v middle,
                 c inner)

The header fully determines the payload length; a file with too few or
too many payload bytes is rejected, as is any non-finite value. The
format is deliberately minimal so that activation producers written in
any language can emit it with a few lines of code.

A bundle is one directory per image holding one ``<layer_name>.atn``
file per layer: ``<dir>/<image_id>/<layer_name>.atn``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .validation import check_identifier

MAGIC = b"ATN1"
DTYPE_F32 = 0x01
_HEADER = struct.Struct("<4sBB3I")
HEADER_SIZE = _HEADER.size  # 18


@dataclass(frozen=True, eq=False)
class ActivationTensor:
    """One layer's activation map for one image.

    ``data`` has shape (W, H, C), dtype float32, C memory order, and is
    frozen after construction so tensors can be shared across threads.
    W = H = 1 is the fully-connected case.
    """

    layer_name: str
    data: np.ndarray

    def __post_init__(self):
        check_identifier(self.layer_name, "layer name")
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise DataError(
                f"activation tensor must have 3 dims (W, H, C), got shape {arr.shape}"
            )
        if min(arr.shape) < 1:
            raise DataError(f"tensor dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError(
                f"tensor for layer {self.layer_name!r} contains NaN or Inf"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def location_vectors(self) -> np.ndarray:
        """All W*H location vectors as a (W*H, C) view, row-major."""
        return self.data.reshape(-1, self.channels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationTensor):
            return NotImplemented
        return (
            self.layer_name == other.layer_name
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True, eq=False)
class ActivationBundle:
    """All configured layers' activations for one image, in layer order."""

    image_id: str
    tensors: tuple

    def __post_init__(self):
        check_identifier(self.image_id, "image id")
        tensors = tuple(self.tensors)
        names = [t.layer_name for t in tensors]
        if len(set(names)) != len(names):
            raise DataError(f"bundle {self.image_id!r} has duplicate layer names")
        object.__setattr__(self, "tensors", tensors)

    @property
    def layer_names(self) -> tuple:
        return tuple(t.layer_name for t in self.tensors)

    def tensor(self, layer_name: str) -> ActivationTensor:
        for t in self.tensors:
            if t.layer_name == layer_name:
                return t
        raise DataError(
            f"bundle {self.image_id!r} has no layer {layer_name!r}"
        )


def tensor_to_bytes(tensor: ActivationTensor) -> bytes:
    """Serialize a tensor to ATN1 bytes."""
    w, h, c = tensor.data.shape
    header = _HEADER.pack(MAGIC, DTYPE_F32, 3, w, h, c)
    return header + tensor.data.astype("<f4", copy=False).tobytes(order="C")


def tensor_from_bytes(buf: bytes, layer_name: str) -> ActivationTensor:
    """Parse ATN1 bytes; rejects any malformed or non-finite content."""
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"ATN1 data truncated: {len(buf)} bytes < header size")
    magic, dtype, ndim, w, h, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code 0x{dtype:02X}")
    if ndim != 3:
        raise FormatError(f"unsupported ndim {ndim}, expected 3")
    if min(w, h, c) < 1:
        raise FormatError(f"tensor dims must be positive, got ({w}, {h}, {c})")
    expected = HEADER_SIZE + 4 * w * h * c
    if len(buf) < expected:
        raise FormatError(
            f"truncated payload: header declares {w}x{h}x{c} "
            f"({expected} bytes total), file has {len(buf)}"
        )
    if len(buf) > expected:
        raise FormatError(
            f"{len(buf) - expected} trailing bytes after declared payload"
        )
    values = np.frombuffer(buf, dtype="<f4", count=w * h * c, offset=HEADER_SIZE)
    if not np.all(np.isfinite(values)):
        raise FormatError("payload contains NaN or Inf")
    return ActivationTensor(layer_name, values.reshape(w, h, c))


def write_tensor(path, tensor: ActivationTensor) -> None:
    """Write a tensor to an ATN1 file; read_tensor inverts it exactly."""
    Path(path).write_bytes(tensor_to_bytes(tensor))


def read_tensor(path, layer_name: str | None = None) -> ActivationTensor:
    """Read an ATN1 file.

    The format does not store the layer name; it defaults to the file
    stem per the bundle naming convention and can be overridden.
    """
    path = Path(path)
    if layer_name is None:
        layer_name = path.stem
    return tensor_from_bytes(path.read_bytes(), layer_name)


def bundle_dir(root, image_id: str) -> Path:
    return Path(root) / image_id


def tensor_path(root, image_id: str, layer_name: str) -> Path:
    return bundle_dir(root, image_id) / f"{layer_name}.atn"


def read_bundle(root, image_id: str, layers) -> ActivationBundle:
    """Load one image's tensors for the requested layers, in that order."""
    layers = list(layers)
    if len(set(layers)) != len(layers):
        raise DataError(f"duplicate layer in request: {layers}")
    tensors = []
    for layer in layers:
        path = tensor_path(root, image_id, layer)
        if not path.is_file():
            raise DataError(
                f"missing layer file for image {image_id!r}: {path}"
            )
        tensors.append(read_tensor(path, layer))
    return ActivationBundle(image_id, tuple(tensors))


def write_bundle(root, bundle: ActivationBundle) -> None:
    """Write every tensor of a bundle under the naming convention."""
    d = bundle_dir(root, bundle.image_id)
    d.mkdir(parents=True, exist_ok=True)
    for t in bundle.tensors:
        write_tensor(d / f"{t.layer_name}.atn", t)


def list_image_ids(root) -> list[str]:
    """Image ids present under a bundle directory, sorted."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"bundle directory not found: {root}")
    return sorted(p.name for p in root.iterdir() if p.is_dir())
