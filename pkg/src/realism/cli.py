"""The ``realism`` command: build-ref, featurize, split, train, predict,
evaluate, version.

Conventions shared by every subcommand:

* progress and the effective configuration (seed included) go to
  stderr; stdout carries only machine-readable results;
* flags override config-file values, which override defaults;
* inputs are validated before any compute starts, and output files are
  written only after the stage finished, so a failing stage never
  leaves partial output;
* failures print one line ``error: <category>: <detail>`` and exit 1.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .atn import list_image_ids, read_bundle, tensor_path
from .config import (
    DEFAULT_L2,
    DEFAULT_LAYERS,
    DEFAULT_MAX_ITER,
    DEFAULT_POOL_CAP,
    DEFAULT_SEED,
    DEFAULT_TEST_FRACTION,
    DEFAULT_TOL,
    PipelineConfig,
    parse_config_file,
    parse_layer_list,
    resolve_threads,
)
from .errors import DataError, IdMismatchError, LayerMismatchError, RealismError
from .evaluation import (
    SplitSpec,
    evaluate,
    format_grid,
    read_labels_csv,
    split,
    write_labels_csv,
    write_predictions_csv,
)
from .features import featurize, read_features_csv, write_features_csv
from .pools import PoolConfig, build_pool, load_pool, pool_path, save_pool
from .regression import TrainSet, fit, load_model, predict_proba, save_model


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _as_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _print_config(command: str, settings: dict) -> None:
    parts = " ".join(f"{k}={v}" for k, v in settings.items())
    _progress(f"[{command}] config: {parts}")


class _Options:
    """Flag > config file > default resolution for one subcommand."""

    def __init__(self, args):
        self.file = parse_config_file(args.config) if args.config else {}
        self.args = args

    def get(self, name: str, default, convert=str):
        flag = getattr(self.args, name.replace("-", "_"), None)
        if flag is not None:
            return flag
        if name in self.file:
            raw = self.file[name]
            try:
                return convert(raw)
            except (TypeError, ValueError):
                raise DataError(f"config value {name}={raw!r} is invalid")
        return default

    def require(self, name: str, convert=str):
        value = self.get(name, None, convert)
        if value is None:
            raise DataError(
                f"--{name} is required (set it on the command line or in the "
                "config file)"
            )
        return value


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    return path


def _require_dir(path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{what} not found: {path}")
    return path


def _check_bundle_tree(bundles_dir, image_ids, layers) -> None:
    """Fail before any compute if a single layer file is missing."""
    for image_id in image_ids:
        for layer in layers:
            path = tensor_path(bundles_dir, image_id, layer)
            if not path.is_file():
                raise DataError(
                    f"missing layer file for image {image_id!r}: {path}"
                )


def cmd_build_ref(args) -> int:
    opt = _Options(args)
    bundles_dir = _require_dir(opt.require("bundles"), "bundle directory")
    layers = parse_layer_list(opt.get("layers", ",".join(DEFAULT_LAYERS)))
    cap = opt.get("cap", DEFAULT_POOL_CAP, int)
    seed = opt.get("seed", DEFAULT_SEED, int)
    out_dir = Path(opt.require("out"))
    location_matched = opt.get("location-matched", False, _as_bool)
    _print_config(
        "build-ref",
        {
            "bundles": bundles_dir,
            "layers": ",".join(layers),
            "cap": cap,
            "seed": seed,
            "location_matched": int(location_matched),
            "out": out_dir,
        },
    )
    pipeline = PipelineConfig(
        layers=layers, pool_cap=cap, seed=seed,
        paths={"bundles": str(bundles_dir), "pools": str(out_dir)},
    )
    image_ids = list_image_ids(bundles_dir)
    if not image_ids:
        raise DataError(f"no image bundles under {bundles_dir}")
    _check_bundle_tree(bundles_dir, image_ids, layers)
    config = PoolConfig(
        pool_cap=pipeline.pool_cap,
        seed=pipeline.seed,
        layers=pipeline.layers,
        location_matched=location_matched,
    )
    # All pools are built before anything is written, so a bad layer
    # cannot leave a partial output directory.
    pools = []
    for layer in layers:
        bundles = (
            read_bundle(bundles_dir, image_id, [layer]) for image_id in image_ids
        )
        pools.append(build_pool(bundles, layer, config))
        _progress(
            f"[build-ref] {layer}: {pools[-1].size} vectors "
            f"from {len(image_ids)} images"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    for pool in pools:
        save_pool(pool_path(out_dir, pool.layer_name), pool)
    print(f"pools_written = {len(pools)}")
    print(f"pools_dir = {out_dir}")
    return 0


def cmd_featurize(args) -> int:
    opt = _Options(args)
    bundles_dir = _require_dir(opt.require("bundles"), "bundle directory")
    pools_dir = _require_dir(opt.require("pools"), "pool directory")
    layers = parse_layer_list(opt.get("layers", ",".join(DEFAULT_LAYERS)))
    aggregate = opt.get("aggregate", "sum")
    out_path = Path(opt.require("out"))
    threads = resolve_threads()
    _print_config(
        "featurize",
        {
            "bundles": bundles_dir,
            "pools": pools_dir,
            "layers": ",".join(layers),
            "aggregate": aggregate,
            "threads": threads,
            "out": out_path,
        },
    )
    for layer in layers:
        _require_file(pool_path(pools_dir, layer), f"pool for layer {layer!r}")
    image_ids = list_image_ids(bundles_dir)
    if not image_ids:
        raise DataError(f"no image bundles under {bundles_dir}")
    _check_bundle_tree(bundles_dir, image_ids, layers)
    pools = [load_pool(pool_path(pools_dir, layer)) for layer in layers]

    def score(image_id):
        bundle = read_bundle(bundles_dir, image_id, layers)
        return featurize(bundle, pools, aggregate=aggregate)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(score, image_ids))
    else:
        vectors = [score(image_id) for image_id in image_ids]
    write_features_csv(out_path, layers, vectors)
    print(f"rows_written = {len(vectors)}")
    print(f"features = {out_path}")
    return 0


def cmd_split(args) -> int:
    opt = _Options(args)
    labels_path = _require_file(opt.require("labels"), "labels file")
    frac = opt.get("frac", DEFAULT_TEST_FRACTION, float)
    seed = opt.get("seed", DEFAULT_SEED, int)
    stratified = opt.get("stratified", False, _as_bool)
    train_out = Path(opt.get("train-out", f"{labels_path}.train.csv"))
    test_out = Path(opt.get("test-out", f"{labels_path}.test.csv"))
    _print_config(
        "split",
        {
            "labels": labels_path,
            "frac": frac,
            "seed": seed,
            "stratified": int(stratified),
            "train_out": train_out,
            "test_out": test_out,
        },
    )
    pipeline = PipelineConfig(
        test_fraction=frac, seed=seed,
        paths={"labels": str(labels_path)},
    )
    records = read_labels_csv(labels_path)
    schema = "binary" if all(r.rater_count == 1 for r in records) else "spectrum"
    train, test = split(
        records,
        SplitSpec(
            test_fraction=pipeline.test_fraction,
            seed=pipeline.seed,
            stratified=stratified,
        ),
    )
    write_labels_csv(train_out, train, schema=schema)
    write_labels_csv(test_out, test, schema=schema)
    print(f"train_records = {len(train)}")
    print(f"test_records = {len(test)}")
    return 0


def _join_training_rows(layer_names, vectors, records, aggregate_labels):
    by_id = {fv.image_id: fv for fv in vectors}
    missing = sorted({r.image_id for r in records} - by_id.keys())
    if missing:
        raise IdMismatchError(
            f"{len(missing)} labeled image(s) have no features, first "
            f"missing: {missing[0]!r}"
        )
    if aggregate_labels == "mean":
        votes = {}
        for r in records:
            v, n = votes.get(r.image_id, (0, 0))
            votes[r.image_id] = (v + r.votes_real, n + r.rater_count)
        ids = sorted(votes)
        x = np.vstack([by_id[i].values for i in ids])
        y = np.array([votes[i][0] / votes[i][1] for i in ids])
    else:
        x = np.vstack([by_id[r.image_id].values for r in records])
        y = np.array([r.label for r in records], dtype=np.float64)
    return x, y


def cmd_train(args) -> int:
    opt = _Options(args)
    features_path = _require_file(opt.require("features"), "features file")
    labels_path = _require_file(opt.require("labels"), "labels file")
    l2 = opt.get("lambda", DEFAULT_L2, float)
    tol = opt.get("tol", DEFAULT_TOL, float)
    max_iter = opt.get("max-iter", DEFAULT_MAX_ITER, int)
    seed = opt.get("seed", DEFAULT_SEED, int)
    aggregate_labels = opt.get("aggregate-labels", "rows")
    dataset = opt.get("dataset", labels_path.stem.replace(" ", "_"))
    out_path = Path(opt.require("out"))
    _print_config(
        "train",
        {
            "features": features_path,
            "labels": labels_path,
            "lambda": l2,
            "tol": tol,
            "max_iter": max_iter,
            "seed": seed,
            "aggregate_labels": aggregate_labels,
            "dataset": dataset,
            "out": out_path,
        },
    )
    if aggregate_labels not in ("rows", "mean"):
        raise DataError(
            f"aggregate-labels must be rows or mean, got {aggregate_labels!r}"
        )
    layer_names, vectors = read_features_csv(features_path)
    records = read_labels_csv(labels_path)
    if aggregate_labels == "rows" and any(r.rater_count != 1 for r in records):
        # Spectrum aggregates carry fractional targets by nature.
        aggregate_labels = "mean"
    x, y = _join_training_rows(layer_names, vectors, records, aggregate_labels)
    train = TrainSet(x, y, layer_names, dataset_id=dataset)
    model = fit(train, l2=l2, tol=tol, max_iter=max_iter, seed=seed)
    model.train_meta["target_mode"] = aggregate_labels
    if not model.train_meta["converged"]:
        _progress(
            "[train] warning: did not converge in "
            f"{max_iter} iterations; final gradient norm = "
            f"{model.train_meta['grad_norm']:.3e}"
        )
    save_model(out_path, model)
    print(f"model = {out_path}")
    print(f"iterations = {model.train_meta['iterations']}")
    print(f"converged = {int(model.train_meta['converged'])}")
    return 0


def cmd_predict(args) -> int:
    opt = _Options(args)
    model_path = _require_file(opt.require("model"), "model file")
    features_path = _require_file(opt.require("features"), "features file")
    out_path = Path(opt.require("out"))
    _print_config(
        "predict",
        {"model": model_path, "features": features_path, "out": out_path},
    )
    model = load_model(model_path)
    layer_names, vectors = read_features_csv(features_path)
    if tuple(layer_names) != model.layer_names:
        raise LayerMismatchError(
            f"feature layers {layer_names} do not match model layers "
            f"{model.layer_names}"
        )
    predictions = []
    for fv in vectors:
        p = predict_proba(model, fv)
        predictions.append((fv.image_id, p, int(p >= 0.5)))
    write_predictions_csv(out_path, predictions)
    print(f"rows_written = {len(predictions)}")
    print(f"predictions = {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    opt = _Options(args)
    model_path = _require_file(opt.require("model"), "model file")
    features_path = _require_file(opt.require("features"), "features file")
    labels_path = _require_file(opt.require("labels"), "labels file")
    mode = opt.get("mode", "binary")
    dataset = opt.get("dataset", labels_path.stem.replace(" ", "_"))
    out_path = opt.get("out", None)
    preds_out = opt.get("preds-out", None)
    _print_config(
        "evaluate",
        {
            "model": model_path,
            "features": features_path,
            "labels": labels_path,
            "mode": mode,
            "dataset": dataset,
            "out": out_path or "-",
        },
    )
    model = load_model(model_path)
    layer_names, vectors = read_features_csv(features_path)
    records = read_labels_csv(labels_path)
    report = evaluate(
        model,
        layer_names,
        vectors,
        records,
        mode=mode,
        train_dataset=model.train_meta.get("dataset", ""),
        test_dataset=dataset,
    )
    _progress(format_grid([report]))
    text = report.to_kv_text()
    sys.stdout.write(text)
    if out_path:
        Path(out_path).write_text(text)
    if preds_out:
        write_predictions_csv(preds_out, report.predictions)
    return 0


def cmd_version(args) -> int:
    print(f"realism {__version__}")
    return 0


def _add_config_flag(p) -> None:
    p.add_argument("--config", help="flat key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="realism",
        description="Sample-level image realism scoring pipeline.",
    )
    parser.add_argument(
        "--version", action="version", version=f"realism {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-ref", help="build per-layer reference pools")
    p.add_argument("--bundles", help="directory of training image bundles")
    p.add_argument("--layers", help="comma-separated layer names")
    p.add_argument("--cap", type=int, help="max vectors per pool")
    p.add_argument("--seed", type=int, help="subsampling seed")
    p.add_argument(
        "--location-matched",
        action="store_const",
        const=True,
        help="restrict neighbors to the same spatial location",
    )
    p.add_argument("--out", help="output pool directory")
    _add_config_flag(p)
    p.set_defaults(func=cmd_build_ref)

    p = sub.add_parser("featurize", help="score bundles against pools")
    p.add_argument("--bundles", help="directory of image bundles")
    p.add_argument("--pools", help="directory of pool files")
    p.add_argument("--layers", help="comma-separated layer names")
    p.add_argument("--aggregate", choices=("sum", "mean"))
    p.add_argument("--out", help="output features CSV")
    _add_config_flag(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("split", help="split labels into train/test by image")
    p.add_argument("--labels", help="labels CSV")
    p.add_argument("--frac", type=float, help="test fraction in (0,1)")
    p.add_argument("--seed", type=int, help="split seed")
    p.add_argument("--stratified", action="store_const", const=True)
    p.add_argument("--train-out", help="output CSV for the training side")
    p.add_argument("--test-out", help="output CSV for the test side")
    _add_config_flag(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="fit the logistic realism model")
    p.add_argument("--features", help="features CSV")
    p.add_argument("--labels", help="labels CSV")
    p.add_argument("--lambda", type=float, help="ridge penalty")
    p.add_argument("--tol", type=float, help="gradient norm stop")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--aggregate-labels",
        choices=("rows", "mean"),
        help="train on label rows or per-image label means",
    )
    p.add_argument("--dataset", help="dataset id recorded in the model")
    p.add_argument("--out", help="output model file")
    _add_config_flag(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score features with a model")
    p.add_argument("--model", help="model file")
    p.add_argument("--features", help="features CSV")
    p.add_argument("--out", help="output predictions CSV")
    _add_config_flag(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="evaluate a model against labels")
    p.add_argument("--model", help="model file")
    p.add_argument("--features", help="features CSV")
    p.add_argument("--labels", help="labels CSV")
    p.add_argument("--mode", choices=("binary", "spectrum"))
    p.add_argument("--dataset", help="test dataset id for the report")
    p.add_argument("--out", help="report output file")
    p.add_argument("--preds-out", help="per-image predictions CSV")
    _add_config_flag(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("version", help="print the version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RealismError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
