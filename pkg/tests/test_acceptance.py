"""Acceptance gate: one test per release criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one
``[ACCEPTANCE] <criterion>: PASS|FAIL`` line per criterion.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from realism.atn import (
    ActivationBundle,
    ActivationTensor,
    read_tensor,
    tensor_path,
    write_tensor,
)
from realism.cli import main
from realism.evaluation import (
    LabelRecord,
    parse_report,
    spearman_rho,
    write_labels_csv,
)
from realism.features import featurize, nn_distance
from realism.pools import PoolConfig, ReferencePool, build_pool, load_pool, save_pool
from realism.regression import (
    RealismModel,
    TrainSet,
    fit,
    load_model,
    penalized_grad,
    penalized_loss,
    predict_label,
    save_model,
    sigmoid,
    standardize,
)

from conftest import labels_from_features, make_synthetic_world
from oracles import featurize_oracle


@contextmanager
def criterion(name, budget_seconds=None):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    elapsed = time.monotonic() - start
    if budget_seconds is not None and elapsed >= budget_seconds:
        print(f"[ACCEPTANCE] {name}: FAIL (took {elapsed:.1f}s)")
        raise AssertionError(
            f"{name} exceeded its {budget_seconds}s budget: {elapsed:.1f}s"
        )
    print(f"[ACCEPTANCE] {name}: PASS ({elapsed:.1f}s)")


def test_oracle_equivalence_feature_core():
    """200 random instances match the naive double-loop oracle at 1e-9."""
    with criterion("oracle equivalence, feature core", budget_seconds=30):
        gen = np.random.default_rng(1001)
        for _ in range(200):
            w = int(gen.integers(1, 9))
            h = int(gen.integers(1, 9))
            c = int(gen.integers(1, 65))
            k = int(gen.integers(1, 513))
            tensor = ActivationTensor(
                "L", (gen.normal(size=(w, h, c)) * gen.uniform(0.1, 10)).astype(np.float32)
            )
            pool = ReferencePool(
                "L", gen.normal(size=(k, c)).astype(np.float32), k, 0
            )
            bundle = ActivationBundle("img", (tensor,))
            ours = featurize(bundle, [pool]).values
            ref = featurize_oracle(bundle, [pool])
            np.testing.assert_allclose(ours, ref, rtol=1e-9)


def test_nn_distance_invariants():
    """Nonnegativity, zero on match, pool growth, permutation: 1000 cases each."""
    with criterion("nearest-neighbor distance invariants", budget_seconds=10):
        gen = np.random.default_rng(1002)

        def pool_of(rows):
            rows = np.asarray(rows, dtype=np.float32)
            return ReferencePool("L", rows, len(rows), 0)

        for _ in range(1000):
            c = int(gen.integers(1, 12))
            k = int(gen.integers(1, 24))
            rows = gen.normal(size=(k, c)).astype(np.float32)
            query = gen.normal(size=c) * 10

            # nonnegativity
            d = nn_distance(query, pool_of(rows))
            assert d >= 0.0 and np.isfinite(d)

            # zero on exact match
            assert nn_distance(rows[int(gen.integers(k))], pool_of(rows)) == 0.0

            # growth monotonicity
            extra = np.concatenate(
                [rows, gen.normal(size=(int(gen.integers(1, 8)), c)).astype(np.float32)]
            )
            assert nn_distance(query, pool_of(extra)) <= d

            # permutation invariance
            perm = rows[gen.permutation(k)]
            assert nn_distance(query, pool_of(perm)) == d


def test_subsampling_correctness():
    """Pool is a no-duplicate subset of candidates; deterministic under seed."""
    with criterion("subsampling correctness", budget_seconds=30):
        gen = np.random.default_rng(1003)
        for _ in range(50):
            n_img = int(gen.integers(1, 9))
            w = int(gen.integers(1, 4))
            h = int(gen.integers(1, 4))
            c = int(gen.integers(1, 5))
            if n_img * w * h > 200:
                continue
            bundles = [
                ActivationBundle(
                    f"i{j:02d}",
                    (ActivationTensor("L", gen.normal(size=(w, h, c)).astype(np.float32)),),
                )
                for j in range(n_img)
            ]
            count = n_img * w * h
            cap = int(gen.integers(1, count + 3))
            seed = int(gen.integers(0, 2**32))
            cfg = PoolConfig(pool_cap=cap, layers=("L",), seed=seed)
            pool = build_pool(bundles, "L", cfg)
            assert pool.size == min(cap, count)

            # brute-force multiset membership, duplicates consumed
            remaining = [
                row.tobytes()
                for b in bundles
                for row in b.tensors[0].data.reshape(-1, c)
            ]
            for row in pool.vectors:
                key = row.tobytes()
                assert key in remaining, "pool vector not among candidates"
                remaining.remove(key)

            again = build_pool(bundles, "L", cfg)
            assert again.vectors.tobytes() == pool.vectors.tobytes()


def test_regression_fit_quality():
    """1e5-row synthetic recovery at 5%, gradient check at 1e-6, convex sanity."""
    with criterion("regression fit quality", budget_seconds=60):
        gen = np.random.default_rng(1004)
        w_true = np.array([1.2, -0.8, 0.6, -1.5, 0.9, 1.1, -0.7])
        b_true = 0.3
        x = gen.normal(size=(100_000, 7))
        p = sigmoid(x @ w_true + b_true)
        y = (gen.uniform(size=len(p)) < p).astype(np.float64)
        names = tuple(f"f{j}" for j in range(7))
        model = fit(TrainSet(x, y, names), l2=1e-6)
        assert model.train_meta["converged"]
        w_hat = model.weights / model.feature_stds
        b_hat = model.intercept - float(
            (model.weights * model.feature_means / model.feature_stds).sum()
        )
        np.testing.assert_allclose(w_hat, w_true, rtol=0.05)
        np.testing.assert_allclose(b_hat, b_true, rtol=0.05)

        # analytic gradient vs central differences at 10 random points
        xs = gen.normal(size=(180, 7))
        ys = (gen.uniform(size=180) < 0.5).astype(np.float64)
        l2 = 1e-3
        for _ in range(10):
            w = gen.normal(size=7)
            b = float(gen.normal())
            gw, gb = penalized_grad(xs, ys, w, b, l2)
            analytic = np.concatenate([gw, [gb]])
            numeric = np.empty(8)
            for j in range(8):
                h = 1e-6 * max(1.0, abs(w[j]) if j < 7 else abs(b))
                wp, wm, bp, bm = w.copy(), w.copy(), b, b
                if j < 7:
                    wp[j] += h
                    wm[j] -= h
                else:
                    bp += h
                    bm -= h
                numeric[j] = (
                    penalized_loss(xs, ys, wp, bp, l2)
                    - penalized_loss(xs, ys, wm, bm, l2)
                ) / (2 * h)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

        # penalized loss at the optimum never exceeds loss at zero
        z, *_ = standardize(x)
        at_zero = penalized_loss(z, y, np.zeros(7), 0.0, 1e-6)
        at_opt = penalized_loss(z, y, model.weights, model.intercept, 1e-6)
        assert at_opt <= at_zero


def test_decision_rule_invariance():
    """Positive scaling of (weights, intercept) flips no label on 1000 inputs."""
    with criterion("decision-rule scaling invariance", budget_seconds=10):
        gen = np.random.default_rng(1005)
        names = tuple(f"f{j}" for j in range(5))
        base = RealismModel(
            layer_names=names,
            weights=gen.normal(size=5),
            intercept=float(gen.normal()),
            feature_means=gen.normal(size=5),
            feature_stds=np.abs(gen.normal(size=5)) + 0.5,
            degenerate=np.zeros(5, dtype=bool),
        )
        x = gen.normal(size=(1000, 5)) * 5
        labels = predict_label(base, x)
        for scale in (1e-3, 0.25, 3.0, 1e3):
            scaled = RealismModel(
                layer_names=names,
                weights=base.weights * scale,
                intercept=base.intercept * scale,
                feature_means=base.feature_means,
                feature_stds=base.feature_stds,
                degenerate=base.degenerate,
            )
            np.testing.assert_array_equal(predict_label(scaled, x), labels)


def test_spearman_correctness():
    """Exact values on monotone, reversed, and tied data; transform invariance."""
    with criterion("rank correlation correctness", budget_seconds=10):
        gen = np.random.default_rng(1006)
        x = np.sort(gen.normal(size=40))
        assert spearman_rho(x, np.exp(x)) == 1.0
        assert spearman_rho(x, -(x**3)) == -1.0
        assert spearman_rho([1, 2, 3, 4], [1, 1, 3, 4]) == pytest.approx(
            0.9487, abs=1e-3
        )
        for _ in range(50):
            n = int(gen.integers(3, 50))
            a = gen.normal(size=n)
            b = gen.integers(0, 5, size=n).astype(float)
            if np.all(b == b[0]):
                continue
            base = spearman_rho(a, b)
            fa = 2.0 * a + a**3 + np.exp(a / 5)
            gb = 10.0 * b + 3.0
            assert spearman_rho(fa, gb) == pytest.approx(base, abs=1e-12)


def _run_cli_pipeline(img_dir, ref_dir, out, seed, labels_csv, spectrum_csv):
    out.mkdir(parents=True, exist_ok=True)
    layers = "convA,fcB"
    steps = [
        ["build-ref", "--bundles", str(ref_dir), "--layers", layers,
         "--cap", "10000", "--seed", str(seed), "--out", str(out / "pools")],
        ["featurize", "--bundles", str(img_dir), "--pools", str(out / "pools"),
         "--layers", layers, "--out", str(out / "features.csv")],
        ["split", "--labels", str(labels_csv), "--frac", "0.1",
         "--seed", str(seed), "--train-out", str(out / "train.csv"),
         "--test-out", str(out / "test.csv")],
        ["train", "--features", str(out / "features.csv"),
         "--labels", str(out / "train.csv"), "--lambda", "1e-4",
         "--seed", str(seed), "--dataset", "synthetic",
         "--out", str(out / "model.rsm")],
        ["predict", "--model", str(out / "model.rsm"),
         "--features", str(out / "features.csv"),
         "--out", str(out / "preds.csv")],
        ["evaluate", "--model", str(out / "model.rsm"),
         "--features", str(out / "features.csv"),
         "--labels", str(out / "test.csv"), "--mode", "binary",
         "--dataset", "synthetic-test", "--out", str(out / "report_binary.txt")],
        ["evaluate", "--model", str(out / "model.rsm"),
         "--features", str(out / "features.csv"),
         "--labels", str(spectrum_csv), "--mode", "spectrum",
         "--dataset", "synthetic-spectrum",
         "--out", str(out / "report_spectrum.txt")],
    ]
    for argv in steps:
        assert main(argv) == 0, f"stage failed: {argv[0]}"


def test_end_to_end_synthetic_pipeline(tmp_path):
    """Full CLI on 2000 graded-realism images: accuracy and rho thresholds,
    byte-identical outputs across two runs."""
    with criterion("end-to-end synthetic pipeline", budget_seconds=300):
        seed = 424242
        ref_dir, img_dir, _ = make_synthetic_world(
            tmp_path, n_ref=150, n_images=2000, seed=seed
        )
        # Featurize once to derive labels from a known linear model.
        pre = tmp_path / "pre"
        pre.mkdir()
        assert main([
            "build-ref", "--bundles", str(ref_dir), "--layers", "convA,fcB",
            "--cap", "10000", "--seed", str(seed), "--out", str(pre / "pools"),
        ]) == 0
        assert main([
            "featurize", "--bundles", str(img_dir), "--pools", str(pre / "pools"),
            "--layers", "convA,fcB", "--out", str(pre / "features.csv"),
        ]) == 0
        ids, p, labels, votes = labels_from_features(
            pre / "features.csv", seed=seed, weights=(-2.5, -2.0), intercept=0.0
        )
        labels_csv = tmp_path / "labels.csv"
        spectrum_csv = tmp_path / "spectrum.csv"
        write_labels_csv(
            labels_csv, [LabelRecord(i, int(l), 1) for i, l in zip(ids, labels)]
        )
        write_labels_csv(
            spectrum_csv,
            [LabelRecord(i, int(v), 5) for i, v in zip(ids, votes)],
            schema="spectrum",
        )

        _run_cli_pipeline(img_dir, ref_dir, tmp_path / "run1", seed,
                          labels_csv, spectrum_csv)
        _run_cli_pipeline(img_dir, ref_dir, tmp_path / "run2", seed,
                          labels_csv, spectrum_csv)

        for name in ("features.csv", "model.rsm", "preds.csv",
                     "report_binary.txt", "report_spectrum.txt"):
            a = (tmp_path / "run1" / name).read_bytes()
            b = (tmp_path / "run2" / name).read_bytes()
            assert a == b, f"{name} differs between identical seeded runs"

        binary = parse_report((tmp_path / "run1" / "report_binary.txt").read_text())
        spectrum = parse_report(
            (tmp_path / "run1" / "report_spectrum.txt").read_text()
        )
        from realism.evaluation import read_labels_csv

        test_labels = [r.label for r in read_labels_csv(tmp_path / "run1" / "test.csv")]
        majority = max(
            sum(test_labels) / len(test_labels),
            1 - sum(test_labels) / len(test_labels),
        )
        accuracy = binary["binary_accuracy"]
        assert accuracy > majority + 0.10, (
            f"accuracy {accuracy:.3f} not 10 points above majority {majority:.3f}"
        )
        assert spectrum["spearman_rho"] > 0.5, (
            f"spectrum rho {spectrum['spearman_rho']:.3f} <= 0.5"
        )


def test_format_round_trips(tmp_path):
    """ATN1, pool, and model files: bit-exact on 100 random instances each."""
    with criterion("format round-trips", budget_seconds=60):
        gen = np.random.default_rng(1008)

        for i in range(100):
            w, h, c = (int(gen.integers(1, 7)) for _ in range(3))
            t = ActivationTensor(
                "L", (gen.normal(size=(w, h, c)) * 10.0 ** gen.integers(-3, 4)).astype(np.float32)
            )
            path = tmp_path / "t.atn"
            write_tensor(path, t)
            back = read_tensor(path, "L")
            assert back == t
            write_tensor(tmp_path / "t2.atn", back)
            assert (tmp_path / "t2.atn").read_bytes() == path.read_bytes()

        for i in range(100):
            n_img = int(gen.integers(1, 6))
            w, h, c = (int(gen.integers(1, 4)) for _ in range(3))
            bundles = [
                ActivationBundle(
                    f"i{j}",
                    (ActivationTensor("L", gen.normal(size=(w, h, c)).astype(np.float32)),),
                )
                for j in range(n_img)
            ]
            matched = bool(i % 3 == 0)
            pool = build_pool(
                bundles,
                "L",
                PoolConfig(
                    pool_cap=int(gen.integers(1, n_img * w * h + 2)),
                    layers=("L",),
                    seed=int(gen.integers(0, 2**32)),
                    location_matched=matched,
                ),
            )
            path = tmp_path / "p.pool"
            save_pool(path, pool)
            back = load_pool(path)
            assert back.vectors.tobytes() == pool.vectors.tobytes()
            assert (back.layer_name, back.seed, back.source_count, back.grid,
                    back.per_location) == (pool.layer_name, pool.seed,
                                           pool.source_count, pool.grid,
                                           pool.per_location)
            save_pool(tmp_path / "p2.pool", back)
            assert (tmp_path / "p2.pool").read_bytes() == path.read_bytes()

        for i in range(100):
            m = int(gen.integers(1, 9))
            model = RealismModel(
                layer_names=tuple(f"f{j}" for j in range(m)),
                weights=gen.normal(size=m) * 10.0 ** gen.integers(-200, 200),
                intercept=float(gen.normal()),
                feature_means=gen.normal(size=m),
                feature_stds=np.abs(gen.normal(size=m)) + 1e-9,
                degenerate=gen.integers(0, 2, size=m).astype(bool),
                train_meta={
                    "dataset": "roundtrip",
                    "seed": int(gen.integers(0, 2**31)),
                    "lambda": float(10.0 ** gen.integers(-8, 0)),
                    "tol": 1e-8,
                    "max_iter": 500,
                    "iterations": int(gen.integers(0, 100)),
                    "converged": bool(gen.integers(0, 2)),
                    "grad_norm": float(np.abs(gen.normal())),
                    "rows": int(gen.integers(1, 10_000)),
                },
            )
            path = tmp_path / "m.rsm"
            save_model(path, model)
            back = load_model(path)
            assert back.weights.tobytes() == model.weights.tobytes()
            assert back.intercept == model.intercept
            assert back.feature_means.tobytes() == model.feature_means.tobytes()
            assert back.feature_stds.tobytes() == model.feature_stds.tobytes()
            assert np.array_equal(back.degenerate, model.degenerate)
            assert back.train_meta == model.train_meta
            save_model(tmp_path / "m2.rsm", back)
            assert (tmp_path / "m2.rsm").read_bytes() == path.read_bytes()
