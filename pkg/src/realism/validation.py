"""Input-validation helpers used at module boundaries."""

from __future__ import annotations

import re

import numpy as np

from .errors import DataError

# Identifiers name images, layers and datasets; they double as path and
# CSV components, so no separators, no leading dot.
_IDENT_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*\Z")


def check_identifier(name, what="identifier"):
    """Validate a string usable as an image/layer/dataset identifier."""
    if not isinstance(name, str) or _IDENT_RE.match(name) is None:
        raise DataError(
            f"{what} {name!r} is not a valid identifier "
            "(expected [A-Za-z0-9][A-Za-z0-9._-]*)"
        )
    return name


def check_finite(values, what):
    """Reject NaN/Inf anywhere in an array."""
    if not np.all(np.isfinite(values)):
        raise DataError(f"{what} contains NaN or Inf")
    return values


def as_float_vector(values, what):
    """Coerce to a finite 1-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"{what} must be one-dimensional, got shape {arr.shape}")
    check_finite(arr, what)
    return arr


def as_float_matrix(values, what):
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{what} must be two-dimensional, got shape {arr.shape}")
    check_finite(arr, what)
    return arr
