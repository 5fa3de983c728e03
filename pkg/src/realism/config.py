"""Pipeline defaults and flat key=value config files."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, FormatError

# Default embedding layers, lowest to highest level. The first name
# looks truncated from the network's "Conv2d_1a_3x3" but is kept as the
# canonical spelling for compatibility with existing feature files;
# LAYER_ALIASES maps the long form onto it so either works.
DEFAULT_LAYERS = (
    "Conv2d_1a_3x",
    "Conv2d_2b_3x3",
    "Conv2d_3b_1x1",
    "Mixed_5d",
    "Mixed_6e",
    "Mixed_7c",
    "FC",
)

LAYER_ALIASES = {"Conv2d_1a_3x3": "Conv2d_1a_3x"}

DEFAULT_POOL_CAP = 10_000
DEFAULT_TEST_FRACTION = 0.1
DEFAULT_L2 = 1e-4
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
DEFAULT_SEED = 0


def parse_layer_list(text: str) -> tuple:
    """Parse a comma-separated layer list, resolving known aliases."""
    names = [n.strip() for n in text.split(",") if n.strip()]
    if not names:
        raise DataError("layer list is empty")
    resolved = tuple(LAYER_ALIASES.get(n, n) for n in names)
    if len(set(resolved)) != len(resolved):
        raise DataError(f"duplicate layer in list: {text!r}")
    return resolved


def parse_config_file(path) -> dict:
    """Read a flat ``key = value`` config file.

    Blank lines and ``#`` comments are skipped. Values are kept as
    strings; each consumer converts its own keys. Command-line flags
    override file values.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise FormatError(f"{path}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def resolve_threads() -> int:
    """Worker cap from REALISM_THREADS (unset or 0 means auto)."""
    raw = os.environ.get("REALISM_THREADS", "0").strip()
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"REALISM_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise DataError(f"REALISM_THREADS must be >= 0, got {n}")
    if n == 0:
        return os.cpu_count() or 1
    return n


@dataclass
class PipelineConfig:
    """Resolved settings shared by the pipeline stages."""

    layers: tuple = DEFAULT_LAYERS
    pool_cap: int = DEFAULT_POOL_CAP
    seed: int = DEFAULT_SEED
    l2: float = DEFAULT_L2
    test_fraction: float = DEFAULT_TEST_FRACTION
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if not self.layers:
            raise DataError("layer list must be non-empty")
        if self.pool_cap < 1:
            raise DataError(f"pool cap must be >= 1, got {self.pool_cap}")
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError(
                f"test fraction must be in (0, 1), got {self.test_fraction}"
            )
