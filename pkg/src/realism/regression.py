"""Logistic regression from distance features to realism probability.

The model maps an m-dimensional feature vector (one aggregated NN
distance per layer) to the probability that a human rater would call
the image real. Raw distances differ by orders of magnitude across
layers, so features are z-scored on training statistics first; the
statistics are stored in the model, making prediction self-contained.

Fitting maximizes the L2-penalized binomial log-likelihood (penalty
lambda/2 * ||w||^2, intercept unpenalized) by full-batch Newton
iterations with step halving. The problem is strictly convex for
lambda > 0, so the optimum is unique and independent of row order;
iteration stops when the gradient infinity-norm falls below ``tol``.
Targets may be fractional (per-image label means) as well as binary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, LayerMismatchError
from .features import FeatureVector
from .validation import as_float_matrix, as_float_vector, check_identifier

MODEL_MAGIC = "realism-model 1"

# Probabilities are clamped to the open unit interval at float64
# resolution so downstream ratios and logs never see exactly 0 or 1.
_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


def sigmoid(t):
    """Numerically stable logistic function, elementwise."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def standardize(features):
    """Z-score each feature dimension (population-std denominator).

    Returns (standardized, means, stds, degenerate): zero-variance
    dimensions are flagged degenerate and passed through shifted by
    their mean, with std recorded as 1.
    """
    x = as_float_matrix(features, "features")
    if x.shape[0] < 1:
        raise DataError("cannot standardize an empty feature matrix")
    means = x.mean(axis=0)
    stds = np.sqrt(np.mean((x - means) ** 2, axis=0))
    degenerate = stds == 0.0
    stds = np.where(degenerate, 1.0, stds)
    return (x - means) / stds, means, stds, degenerate


@dataclass
class TrainSet:
    """Feature rows with targets; one row per human label.

    An image rated five times contributes five rows sharing one
    feature vector. Targets are 0/1 for per-label training or
    fractions in [0, 1] when labels are aggregated per image.
    """

    features: np.ndarray
    targets: np.ndarray
    layer_names: tuple
    dataset_id: str = ""

    def __post_init__(self):
        self.features = as_float_matrix(self.features, "training features")
        self.targets = as_float_vector(self.targets, "training targets")
        self.layer_names = tuple(self.layer_names)
        if self.features.shape[0] != self.targets.shape[0]:
            raise DataError(
                f"{self.features.shape[0]} feature rows vs "
                f"{self.targets.shape[0]} targets"
            )
        if self.features.shape[0] == 0:
            raise DataError("training set is empty")
        if self.features.shape[1] != len(self.layer_names):
            raise DataError(
                f"{self.features.shape[1]} feature columns vs "
                f"{len(self.layer_names)} layer names"
            )
        if np.any(self.targets < 0.0) or np.any(self.targets > 1.0):
            raise DataError("targets must lie in [0, 1]")


@dataclass(eq=False)
class RealismModel:
    """Fitted weights plus the standardization that produced them."""

    layer_names: tuple
    weights: np.ndarray
    intercept: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    degenerate: np.ndarray
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_names = tuple(self.layer_names)
        m = len(self.layer_names)
        self.weights = as_float_vector(self.weights, "weights")
        self.feature_means = as_float_vector(self.feature_means, "feature means")
        self.feature_stds = as_float_vector(self.feature_stds, "feature stds")
        self.degenerate = np.asarray(self.degenerate, dtype=bool).reshape(-1)
        self.intercept = float(self.intercept)
        for name, arr in (
            ("weights", self.weights),
            ("feature means", self.feature_means),
            ("feature stds", self.feature_stds),
            ("degenerate flags", self.degenerate),
        ):
            if arr.shape[0] != m:
                raise DataError(f"{name} length {arr.shape[0]} != {m} layers")
        if np.any(self.feature_stds <= 0.0):
            raise DataError("feature stds must all be > 0")

    @property
    def m(self) -> int:
        return len(self.layer_names)


def penalized_loss(x, y, weights, intercept, l2) -> float:
    """L2-penalized negative binomial log-likelihood (natural base)."""
    t = x @ weights + intercept
    return float(
        np.sum(np.logaddexp(0.0, t) - y * t) + 0.5 * l2 * float(weights @ weights)
    )


def penalized_grad(x, y, weights, intercept, l2):
    """Gradient of penalized_loss in (weights, intercept)."""
    residual = sigmoid(x @ weights + intercept) - y
    return x.T @ residual + l2 * weights, float(np.sum(residual))


def fit(
    train: TrainSet,
    l2: float = 1e-4,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed: int = 0,
) -> RealismModel:
    """Fit the realism model on standardized features.

    Raises DataError when all targets are identical (a single class
    cannot be fit). If the gradient norm is still above ``tol`` after
    ``max_iter`` Newton steps, the model is returned anyway with
    ``train_meta["converged"] = False``.
    """
    if l2 < 0.0:
        raise DataError(f"ridge penalty must be >= 0, got {l2}")
    y = train.targets
    if np.all(y == y[0]):
        raise DataError(
            "all training targets are identical; both classes are required"
        )
    z, means, stds, degenerate = standardize(train.features)
    n, m = z.shape

    w = np.zeros(m, dtype=np.float64)
    b = 0.0
    loss = penalized_loss(z, y, w, b, l2)
    iterations = 0
    converged = False
    grad_norm = np.inf
    for _ in range(max_iter):
        gw, gb = penalized_grad(z, y, w, b, l2)
        grad_norm = max(float(np.max(np.abs(gw))), abs(gb)) if m else abs(gb)
        if grad_norm < tol:
            converged = True
            break
        mu = sigmoid(z @ w + b)
        s = np.clip(mu * (1.0 - mu), 1e-12, None)
        hess = np.empty((m + 1, m + 1), dtype=np.float64)
        hess[:m, :m] = z.T @ (s[:, None] * z) + l2 * np.eye(m)
        hess[:m, m] = hess[m, :m] = z.T @ s
        hess[m, m] = float(np.sum(s))
        g = np.concatenate([gw, [gb]])
        try:
            step = np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, g, rcond=None)[0]
        # Backtrack if a full Newton step overshoots (possible early on
        # with near-separable data and tiny lambda).
        alpha = 1.0
        for _ in range(60):
            w_new = w - alpha * step[:m]
            b_new = b - alpha * step[m]
            loss_new = penalized_loss(z, y, w_new, b_new, l2)
            if loss_new <= loss + 1e-12:
                break
            alpha *= 0.5
        w, b, loss = w_new, b_new, loss_new
        iterations += 1
    else:
        gw, gb = penalized_grad(z, y, w, b, l2)
        grad_norm = max(float(np.max(np.abs(gw))), abs(gb)) if m else abs(gb)
        converged = grad_norm < tol

    meta = {
        "dataset": train.dataset_id,
        "seed": int(seed),
        "lambda": float(l2),
        "tol": float(tol),
        "max_iter": int(max_iter),
        "iterations": int(iterations),
        "converged": bool(converged),
        "grad_norm": float(grad_norm),
        "rows": int(n),
    }
    return RealismModel(
        layer_names=train.layer_names,
        weights=w,
        intercept=b,
        feature_means=means,
        feature_stds=stds,
        degenerate=degenerate,
        train_meta=meta,
    )


def _model_inputs(model: RealismModel, features):
    if isinstance(features, FeatureVector):
        features = features.values
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.m:
        raise LayerMismatchError(
            f"feature vector has {x.shape[1]} values, model expects {model.m}"
        )
    return x, single


def decision_logit(model: RealismModel, features):
    """Linear score w . standardize(x) + b; label is its sign."""
    x, single = _model_inputs(model, features)
    z = (x - model.feature_means) / model.feature_stds
    t = z @ model.weights + model.intercept
    return float(t[0]) if single else t


def predict_proba(model: RealismModel, features):
    """Probability of the 'real' label, strictly inside (0, 1)."""
    t = decision_logit(model, features)
    p = np.clip(sigmoid(t), _P_LO, _P_HI)
    return float(p) if np.ndim(t) == 0 else p


def predict_label(model: RealismModel, features):
    """Thresholded prediction: 1 iff probability >= 0.5 (ties are real)."""
    p = predict_proba(model, features)
    if np.ndim(p) == 0:
        return int(p >= 0.5)
    return (p >= 0.5).astype(int)


def _float_hex(x: float) -> str:
    return struct.pack(">d", float(x)).hex()


def _hex_float(h: str) -> float:
    raw = bytes.fromhex(h)
    if len(raw) != 8:
        raise FormatError(f"expected 16 hex digits for a float64, got {h!r}")
    return struct.unpack(">d", raw)[0]


def _kv_float(key: str, value: float) -> str:
    return f"{key} = {value!r} {_float_hex(value)}"


def save_model(path, model: RealismModel) -> None:
    """Write the model file; floats carry decimal plus exact hex bits."""
    meta = model.train_meta
    dataset = str(meta.get("dataset", "") or "unlabeled")
    check_identifier(dataset, "dataset id")
    lines = [MODEL_MAGIC]
    lines.append(f"layers = {','.join(model.layer_names)}")
    lines.append(f"m = {model.m}")
    for j in range(model.m):
        lines.append(_kv_float(f"weight.{j}", model.weights[j]))
    lines.append(_kv_float("intercept", model.intercept))
    for j in range(model.m):
        lines.append(_kv_float(f"mean.{j}", model.feature_means[j]))
    for j in range(model.m):
        lines.append(_kv_float(f"std.{j}", model.feature_stds[j]))
    for j in range(model.m):
        lines.append(f"degenerate.{j} = {1 if model.degenerate[j] else 0}")
    lines.append(f"meta.dataset = {dataset}")
    lines.append(f"meta.seed = {int(meta.get('seed', 0))}")
    lines.append(_kv_float("meta.lambda", float(meta.get("lambda", 0.0))))
    lines.append(_kv_float("meta.tol", float(meta.get("tol", 0.0))))
    lines.append(f"meta.max_iter = {int(meta.get('max_iter', 0))}")
    lines.append(f"meta.iterations = {int(meta.get('iterations', 0))}")
    lines.append(f"meta.converged = {1 if meta.get('converged', False) else 0}")
    lines.append(_kv_float("meta.grad_norm", float(meta.get("grad_norm", 0.0))))
    lines.append(f"meta.rows = {int(meta.get('rows', 0))}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_kv_lines(text, path):
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != MODEL_MAGIC:
        raise FormatError(f"model file {path}: bad magic line")
    fields = {}
    for line in lines[1:]:
        if " = " not in line:
            raise FormatError(f"model file {path}: bad line {line!r}")
        key, value = line.split(" = ", 1)
        fields[key] = value
    return fields


def _field_float(fields, key, path) -> float:
    if key not in fields:
        raise FormatError(f"model file {path}: missing {key!r}")
    parts = fields[key].split()
    # The hex bit pattern is authoritative; the decimal is for humans.
    return _hex_float(parts[-1])


def _field_int(fields, key, path) -> int:
    if key not in fields:
        raise FormatError(f"model file {path}: missing {key!r}")
    try:
        return int(fields[key])
    except ValueError:
        raise FormatError(f"model file {path}: {key} is not an integer")


def load_model(path) -> RealismModel:
    """Read a model file written by save_model; round-trip is exact."""
    path = Path(path)
    fields = _parse_kv_lines(path.read_text(), path)
    if "layers" not in fields:
        raise FormatError(f"model file {path}: missing layer list")
    layer_names = tuple(n for n in fields["layers"].split(",") if n)
    m = _field_int(fields, "m", path)
    if m != len(layer_names):
        raise FormatError(
            f"model file {path}: m={m} but {len(layer_names)} layer names"
        )
    weights = np.array([_field_float(fields, f"weight.{j}", path) for j in range(m)])
    means = np.array([_field_float(fields, f"mean.{j}", path) for j in range(m)])
    stds = np.array([_field_float(fields, f"std.{j}", path) for j in range(m)])
    degenerate = np.array(
        [bool(_field_int(fields, f"degenerate.{j}", path)) for j in range(m)]
    )
    meta = {
        "dataset": fields.get("meta.dataset", ""),
        "seed": _field_int(fields, "meta.seed", path),
        "lambda": _field_float(fields, "meta.lambda", path),
        "tol": _field_float(fields, "meta.tol", path),
        "max_iter": _field_int(fields, "meta.max_iter", path),
        "iterations": _field_int(fields, "meta.iterations", path),
        "converged": bool(_field_int(fields, "meta.converged", path)),
        "grad_norm": _field_float(fields, "meta.grad_norm", path),
        "rows": _field_int(fields, "meta.rows", path),
    }
    return RealismModel(
        layer_names=layer_names,
        weights=weights,
        intercept=_field_float(fields, "intercept", path),
        feature_means=means,
        feature_stds=stds,
        degenerate=degenerate,
        train_meta=meta,
    )
