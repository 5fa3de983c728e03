"""Dataset splitting and the two evaluation protocols.

Binary evaluation reports the fraction of held-out human labels the
model predicts correctly at the 50% threshold. Spectrum evaluation
compares the model's probabilities to per-image mean human realism
scores (vote fractions) by Spearman's rank correlation, computed as
Pearson correlation of tie-adjusted ranks -- the classic 6*sum(d^2)
shortcut is wrong under ties and vote fractions are heavily tied.

Splitting is by image: all labels of one image land on the same side,
so a test image's feature vector can never leak into training. The
test side gets round(test_fraction * n_images) images (half-up),
chosen with the portable seeded sampler, so a split depends only on
the set of image ids, the fraction, and the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, IdMismatchError, LayerMismatchError
from .regression import RealismModel, predict_proba
from .rng import SplitMix64
from .validation import check_identifier

MODES = ("binary", "spectrum")
REPORT_MAGIC = "realism-report 1"


@dataclass(frozen=True)
class LabelRecord:
    """One human judgment row: votes_real of rater_count raters said real.

    Binary records have rater_count 1 and votes_real in {0, 1};
    spectrum records carry an image's full vote count, so the mean
    score votes_real / rater_count is exact (denominator = raters).
    """

    image_id: str
    votes_real: int
    rater_count: int = 1

    def __post_init__(self):
        check_identifier(self.image_id, "image id")
        if self.rater_count < 1:
            raise DataError(f"rater count must be >= 1, got {self.rater_count}")
        if not 0 <= self.votes_real <= self.rater_count:
            raise DataError(
                f"votes_real {self.votes_real} outside [0, {self.rater_count}] "
                f"for image {self.image_id!r}"
            )

    @property
    def score(self) -> float:
        return self.votes_real / self.rater_count

    @property
    def label(self) -> int:
        if self.rater_count != 1:
            raise DataError(
                f"record for {self.image_id!r} has {self.rater_count} raters; "
                "a binary label needs exactly one"
            )
        return self.votes_real


@dataclass(frozen=True)
class SplitSpec:
    """How to cut label records into train and test sides."""

    test_fraction: float = 0.1
    seed: int = 0
    stratified: bool = False

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError(
                f"test fraction must be in (0, 1), got {self.test_fraction}"
            )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _image_strata(records):
    """Group image ids by majority label for stratified splitting."""
    votes = {}
    for r in records:
        v, n = votes.get(r.image_id, (0, 0))
        votes[r.image_id] = (v + r.votes_real, n + r.rater_count)
    strata = {0: [], 1: []}
    for image_id in sorted(votes):
        v, n = votes[image_id]
        strata[1 if v * 2 >= n else 0].append(image_id)
    return strata


def split(records, spec: SplitSpec):
    """Partition label records into (train, test) by image.

    Deterministic under the seed and insensitive to record order: ids
    are sorted before sampling. Raises when either side would be empty.
    """
    records = list(records)
    if not records:
        raise DataError("no label records to split")
    images = sorted({r.image_id for r in records})
    n = len(images)

    test_ids = set()
    gen = SplitMix64(spec.seed)
    if spec.stratified:
        # Per-stratum rounding; sizes may differ from the unstratified
        # count by at most one per stratum.
        strata = _image_strata(records)
        for stratum in (0, 1):
            ids = strata[stratum]
            k = _round_half_up(spec.test_fraction * len(ids))
            for i in gen.sample_without_replacement(len(ids), k):
                test_ids.add(ids[i])
    else:
        k = _round_half_up(spec.test_fraction * n)
        test_ids = {images[i] for i in gen.sample_without_replacement(n, k)}

    if not test_ids:
        raise DataError(
            f"too few distinct images ({n}) for test fraction "
            f"{spec.test_fraction}: test split would be empty"
        )
    if len(test_ids) == n:
        raise DataError(
            f"test fraction {spec.test_fraction} consumes all {n} images: "
            "train split would be empty"
        )
    train = [r for r in records if r.image_id not in test_ids]
    test = [r for r in records if r.image_id in test_ids]
    return train, test


def binary_accuracy(preds, truth) -> float:
    """Fraction of exact label matches."""
    preds = list(preds)
    truth = list(truth)
    if len(preds) != len(truth):
        raise DataError(f"{len(preds)} predictions vs {len(truth)} labels")
    if not preds:
        raise DataError("cannot score an empty prediction list")
    correct = sum(1 for p, t in zip(preds, truth) if p == t)
    return correct / len(preds)


def rank_with_ties(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    v = np.asarray(values, dtype=np.float64)
    sorted_v = np.sort(v)
    lo = np.searchsorted(sorted_v, v, side="left")
    hi = np.searchsorted(sorted_v, v, side="right")
    return (lo + hi + 1) / 2.0


def spearman_rho(x, y) -> float:
    """Spearman rank correlation with tie-adjusted (mean) ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"inputs must be equal-length vectors, got {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise DataError("rank correlation needs at least two points")
    for name, arr in (("x", x), ("y", y)):
        if np.all(arr == arr[0]):
            raise DataError(f"{name} is constant; rank correlation is undefined")
    rx = rank_with_ties(x)
    ry = rank_with_ties(y)
    rx -= rx.mean()
    ry -= ry.mean()
    rho = float(rx @ ry / math.sqrt((rx @ rx) * (ry @ ry)))
    return min(1.0, max(-1.0, rho))


@dataclass(frozen=True)
class EvalReport:
    """Outcome of one model evaluated on one labeled test set."""

    train_dataset: str
    test_dataset: str
    mode: str
    n_test: int
    correct: int | None = None
    spearman: float | None = None
    predictions: tuple = field(default_factory=tuple)

    @property
    def binary_accuracy(self) -> float | None:
        if self.correct is None:
            return None
        return self.correct / self.n_test

    def to_kv_text(self) -> str:
        lines = [
            REPORT_MAGIC,
            f"train_dataset = {self.train_dataset}",
            f"test_dataset = {self.test_dataset}",
            f"mode = {self.mode}",
            f"n_test = {self.n_test}",
        ]
        if self.correct is not None:
            lines.append(f"correct = {self.correct}")
            lines.append(f"binary_accuracy = {self.binary_accuracy!r}")
        if self.spearman is not None:
            lines.append(f"spearman_rho = {self.spearman!r}")
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Parse a report back into a dict (inverse of to_kv_text)."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != REPORT_MAGIC:
        raise FormatError("bad report magic line")
    out = {}
    for line in lines[1:]:
        if " = " not in line:
            raise FormatError(f"bad report line {line!r}")
        key, value = line.split(" = ", 1)
        out[key] = value
    for key in ("n_test", "correct"):
        if key in out:
            out[key] = int(out[key])
    for key in ("binary_accuracy", "spearman_rho"):
        if key in out:
            out[key] = float(out[key])
    return out


def evaluate(
    model: RealismModel,
    layer_names,
    feature_vectors,
    records,
    mode: str,
    train_dataset: str = "",
    test_dataset: str = "",
) -> EvalReport:
    """Score a fitted model against held-out labels.

    Binary mode: every record (one human label each) is compared to the
    thresholded prediction for its image. Spectrum mode: one record per
    image carrying its vote counts; reports Spearman's rho between the
    model probability and the mean human score.
    """
    if mode not in MODES:
        raise DataError(f"mode must be one of {MODES}, got {mode!r}")
    layer_names = tuple(layer_names)
    if layer_names != model.layer_names:
        raise LayerMismatchError(
            f"feature layers {layer_names} do not match model layers "
            f"{model.layer_names}"
        )
    features = {}
    for fv in feature_vectors:
        features[fv.image_id] = fv
    records = list(records)
    if not records:
        raise DataError("no label records to evaluate")
    missing = sorted({r.image_id for r in records} - features.keys())
    if missing:
        raise IdMismatchError(
            f"{len(missing)} labeled image(s) have no features, first "
            f"missing: {missing[0]!r}"
        )

    proba = {
        image_id: predict_proba(model, features[image_id])
        for image_id in sorted({r.image_id for r in records})
    }
    predictions = tuple(
        (image_id, proba[image_id], int(proba[image_id] >= 0.5))
        for image_id in sorted(proba)
    )

    if mode == "binary":
        correct = sum(
            1 for r in records if int(proba[r.image_id] >= 0.5) == r.label
        )
        return EvalReport(
            train_dataset=train_dataset,
            test_dataset=test_dataset,
            mode=mode,
            n_test=len(records),
            correct=correct,
            predictions=predictions,
        )

    ids = [r.image_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError(
            "spectrum labels must have one aggregated record per image"
        )
    rho = spearman_rho(
        [proba[r.image_id] for r in records], [r.score for r in records]
    )
    return EvalReport(
        train_dataset=train_dataset,
        test_dataset=test_dataset,
        mode=mode,
        n_test=len(records),
        spearman=rho,
        predictions=predictions,
    )


def format_grid(reports) -> str:
    """Render reports as an aligned train-by-test grid.

    Rows are training datasets, column groups are binary accuracy then
    Spearman's rho, one column per test dataset. Cells without a
    matching report print as "-".
    """
    reports = list(reports)
    if not reports:
        raise DataError("no reports to format")
    train_ids, test_ids = [], []
    acc, rho = {}, {}
    for r in reports:
        if r.train_dataset not in train_ids:
            train_ids.append(r.train_dataset)
        if r.test_dataset not in test_ids:
            test_ids.append(r.test_dataset)
        if r.binary_accuracy is not None:
            acc[(r.train_dataset, r.test_dataset)] = r.binary_accuracy
        if r.spearman is not None:
            rho[(r.train_dataset, r.test_dataset)] = r.spearman

    col_heads = [f"{t} test" for t in test_ids] * 2
    row_heads = [f"trained on {t}" for t in train_ids]
    label_w = max(len(h) for h in row_heads + [""])
    col_w = max(12, max(len(h) for h in col_heads))

    def cell(value, fmt):
        return ("-" if value is None else fmt(value)).rjust(col_w)

    group_w = (col_w + 2) * len(test_ids) - 2
    lines = [
        " " * label_w
        + "  "
        + "binary accuracy".center(group_w)
        + "  "
        + "spearman rho".center(group_w)
    ]
    lines.append(
        " " * label_w + "  " + "  ".join(h.rjust(col_w) for h in col_heads)
    )
    for train in train_ids:
        cells = [
            cell(acc.get((train, t)), lambda v: f"{100.0 * v:.1f}%")
            for t in test_ids
        ] + [cell(rho.get((train, t)), lambda v: f"{v:.2f}") for t in test_ids]
        lines.append(f"trained on {train}".ljust(label_w) + "  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def read_labels_csv(path):
    """Read label records from CSV.

    Two schemas: ``image_id,label`` (binary, one rater per row) and
    ``image_id,votes_real,raters`` (spectrum aggregates).
    """
    path = Path(path)
    with open(path, "r", newline="") as fh:
        lines = [line.rstrip("\n").rstrip("\r") for line in fh]
    lines = [line for line in lines if line]
    if not lines:
        raise FormatError(f"labels file {path} is empty")
    header = lines[0].split(",")
    if header == ["image_id", "label"]:
        schema = "binary"
    elif header == ["image_id", "votes_real", "raters"]:
        schema = "spectrum"
    else:
        raise FormatError(
            f"labels file {path}: header must be image_id,label or "
            f"image_id,votes_real,raters; got {lines[0]!r}"
        )
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise FormatError(f"labels file {path}:{lineno}: wrong column count")
        try:
            if schema == "binary":
                label = int(parts[1])
                if label not in (0, 1):
                    raise ValueError
                records.append(LabelRecord(parts[0], label, 1))
            else:
                records.append(LabelRecord(parts[0], int(parts[1]), int(parts[2])))
        except ValueError:
            raise FormatError(f"labels file {path}:{lineno}: non-integer value")
    if not records:
        raise DataError(f"labels file {path} has no records")
    return records


def write_labels_csv(path, records, schema: str | None = None) -> None:
    """Write label records; schema defaults to binary when possible."""
    records = list(records)
    if schema is None:
        schema = "binary" if all(r.rater_count == 1 for r in records) else "spectrum"
    if schema == "binary":
        for r in records:
            if r.rater_count != 1:
                raise DataError(
                    f"record for {r.image_id!r} has {r.rater_count} raters; "
                    "cannot write binary schema"
                )
        lines = ["image_id,label"] + [f"{r.image_id},{r.votes_real}" for r in records]
    elif schema == "spectrum":
        lines = ["image_id,votes_real,raters"] + [
            f"{r.image_id},{r.votes_real},{r.rater_count}" for r in records
        ]
    else:
        raise DataError(f"unknown labels schema {schema!r}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_predictions_csv(path, predictions) -> None:
    """Write per-image predictions: image_id,probability,label."""
    lines = ["image_id,probability,label"]
    for image_id, proba, label in predictions:
        lines.append(f"{image_id},{proba:.9g},{label}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
