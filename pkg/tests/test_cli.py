import numpy as np
import pytest

from realism.atn import tensor_path
from realism.cli import main
from realism.evaluation import LabelRecord, parse_report, write_labels_csv

from conftest import labels_from_features, make_synthetic_world


def run_pipeline(root, out, seed=7):
    """Drive every stage over a small synthetic fixture."""
    ref_dir, img_dir, _ = make_synthetic_world(root, n_ref=10, n_images=20, seed=seed)
    out.mkdir(exist_ok=True)
    layers = "convA,fcB"
    assert main([
        "build-ref", "--bundles", str(ref_dir), "--layers", layers,
        "--cap", "1000", "--seed", str(seed), "--out", str(out / "pools"),
    ]) == 0
    assert main([
        "featurize", "--bundles", str(img_dir), "--pools", str(out / "pools"),
        "--layers", layers, "--out", str(out / "features.csv"),
    ]) == 0
    ids, p, labels, votes = labels_from_features(out / "features.csv", seed=seed)
    write_labels_csv(
        out / "labels.csv", [LabelRecord(i, int(l), 1) for i, l in zip(ids, labels)]
    )
    assert main([
        "split", "--labels", str(out / "labels.csv"), "--frac", "0.2",
        "--seed", str(seed), "--train-out", str(out / "train.csv"),
        "--test-out", str(out / "test.csv"),
    ]) == 0
    assert main([
        "train", "--features", str(out / "features.csv"),
        "--labels", str(out / "train.csv"), "--lambda", "1e-4",
        "--seed", str(seed), "--dataset", "fixture",
        "--out", str(out / "model.rsm"),
    ]) == 0
    assert main([
        "predict", "--model", str(out / "model.rsm"),
        "--features", str(out / "features.csv"), "--out", str(out / "preds.csv"),
    ]) == 0
    assert main([
        "evaluate", "--model", str(out / "model.rsm"),
        "--features", str(out / "features.csv"), "--labels", str(out / "test.csv"),
        "--mode", "binary", "--dataset", "fixture-test",
        "--out", str(out / "report.txt"),
    ]) == 0


class TestVersion:
    def test_version_subcommand(self, capsys):
        assert main(["version"]) == 0
        assert capsys.readouterr().out.startswith("realism ")

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "realism" in capsys.readouterr().out


class TestPipeline:
    def test_full_pipeline_and_byte_identical_rerun(self, tmp_path):
        run_pipeline(tmp_path / "w1", tmp_path / "out1", seed=7)
        run_pipeline(tmp_path / "w2", tmp_path / "out2", seed=7)
        for name in ("features.csv", "model.rsm", "preds.csv", "report.txt"):
            a = (tmp_path / "out1" / name).read_bytes()
            b = (tmp_path / "out2" / name).read_bytes()
            assert a == b, f"{name} differs between identical runs"
        report = parse_report((tmp_path / "out1" / "report.txt").read_text())
        assert report["mode"] == "binary"
        assert report["train_dataset"] == "fixture"
        assert 0.0 <= report["binary_accuracy"] <= 1.0

    def test_rerun_overwrites_identically(self, tmp_path, capsys):
        out = tmp_path / "out"
        run_pipeline(tmp_path / "w", out, seed=3)
        before = (out / "features.csv").read_bytes()
        assert main([
            "featurize", "--bundles", str(tmp_path / "w" / "bundles"),
            "--pools", str(out / "pools"), "--layers", "convA,fcB",
            "--out", str(out / "features.csv"),
        ]) == 0
        assert (out / "features.csv").read_bytes() == before

    def test_effective_config_printed_with_seed(self, tmp_path, capsys):
        ref_dir, _, _ = make_synthetic_world(tmp_path, 3, 1, seed=1)
        assert main([
            "build-ref", "--bundles", str(ref_dir), "--layers", "convA",
            "--seed", "123", "--out", str(tmp_path / "pools"),
        ]) == 0
        err = capsys.readouterr().err
        assert "[build-ref] config:" in err
        assert "seed=123" in err


class TestErrorReporting:
    def test_id_mismatch_category(self, tmp_path, capsys):
        out = tmp_path / "out"
        run_pipeline(tmp_path / "w", out, seed=5)
        write_labels_csv(out / "bad.csv", [LabelRecord("nosuchimage", 1, 1)])
        code = main([
            "evaluate", "--model", str(out / "model.rsm"),
            "--features", str(out / "features.csv"),
            "--labels", str(out / "bad.csv"), "--mode", "binary",
        ])
        assert code == 1
        assert "error: id-mismatch:" in capsys.readouterr().err

    def test_missing_layer_aborts_before_output(self, tmp_path, capsys):
        out = tmp_path / "out"
        run_pipeline(tmp_path / "w", out, seed=5)
        img_dir = tmp_path / "w" / "bundles"
        tensor_path(img_dir, "img00003", "fcB").unlink()
        target = out / "features2.csv"
        code = main([
            "featurize", "--bundles", str(img_dir), "--pools", str(out / "pools"),
            "--layers", "convA,fcB", "--out", str(target),
        ])
        assert code == 1
        assert "error: data-error:" in capsys.readouterr().err
        assert not target.exists()

    def test_missing_input_file(self, tmp_path, capsys):
        code = main([
            "predict", "--model", str(tmp_path / "absent.rsm"),
            "--features", str(tmp_path / "absent.csv"),
            "--out", str(tmp_path / "p.csv"),
        ])
        assert code == 1
        assert "error: data-error:" in capsys.readouterr().err

    def test_layer_mismatch_category(self, tmp_path, capsys):
        out = tmp_path / "out"
        run_pipeline(tmp_path / "w", out, seed=5)
        features = out / "features.csv"
        text = features.read_text().replace("convA", "convX")
        (out / "renamed.csv").write_text(text)
        code = main([
            "predict", "--model", str(out / "model.rsm"),
            "--features", str(out / "renamed.csv"),
            "--out", str(out / "p2.csv"),
        ])
        assert code == 1
        assert "error: layer-mismatch:" in capsys.readouterr().err


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, tmp_path, capsys):
        ref_dir, _, _ = make_synthetic_world(tmp_path, 4, 1, seed=2)
        cfg = tmp_path / "realism.cfg"
        cfg.write_text("layers = convA,fcB\ncap = 50\nseed = 5\n")
        assert main([
            "build-ref", "--bundles", str(ref_dir), "--config", str(cfg),
            "--seed", "9", "--out", str(tmp_path / "pools"),
        ]) == 0
        err = capsys.readouterr().err
        assert "cap=50" in err  # from file
        assert "seed=9" in err  # flag wins

    def test_bad_config_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("just some words\n")
        code = main([
            "split", "--labels", str(tmp_path / "x.csv"), "--config", str(cfg),
        ])
        assert code == 1
        assert "error: format-error:" in capsys.readouterr().err


class TestSplitCommand:
    def test_writes_both_sides(self, tmp_path, capsys):
        labels = tmp_path / "labels.csv"
        write_labels_csv(
            labels, [LabelRecord(f"img{i:03d}", i % 2, 1) for i in range(30)]
        )
        assert main([
            "split", "--labels", str(labels), "--frac", "0.2", "--seed", "1",
            "--train-out", str(tmp_path / "tr.csv"),
            "--test-out", str(tmp_path / "te.csv"),
        ]) == 0
        out = capsys.readouterr().out
        assert "train_records = 24" in out
        assert "test_records = 6" in out
        assert (tmp_path / "tr.csv").exists() and (tmp_path / "te.csv").exists()


class TestThreads:
    def test_thread_count_does_not_change_output(self, tmp_path, monkeypatch):
        out = tmp_path / "out"
        run_pipeline(tmp_path / "w", out, seed=11)
        monkeypatch.setenv("REALISM_THREADS", "3")
        target = tmp_path / "threaded.csv"
        assert main([
            "featurize", "--bundles", str(tmp_path / "w" / "bundles"),
            "--pools", str(out / "pools"), "--layers", "convA,fcB",
            "--out", str(target),
        ]) == 0
        assert target.read_bytes() == (out / "features.csv").read_bytes()

    def test_invalid_thread_env(self, tmp_path, monkeypatch, capsys):
        out = tmp_path / "out"
        run_pipeline(tmp_path / "w", out, seed=11)
        monkeypatch.setenv("REALISM_THREADS", "lots")
        code = main([
            "featurize", "--bundles", str(tmp_path / "w" / "bundles"),
            "--pools", str(out / "pools"), "--layers", "convA,fcB",
            "--out", str(tmp_path / "x.csv"),
        ])
        assert code == 1
        assert "REALISM_THREADS" in capsys.readouterr().err
