import csv
import hashlib
import json

import numpy as np
import pytest

from ndgan import cli


def run(*argv):
    return cli.main(list(argv))


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def synth_config(tmp_path, **over):
    cfg = {
        "kind": "ring",
        "n_train": 600,
        "n_test": 300,
        "components": 4,
        "radius": 2.0,
        "sigma": 0.2,
        "novel": {"kind": "gaussian", "mean": [0.0, 0.0], "sigma": 0.3, "n": 300},
        "pi": 0.5,
        "seed": 11,
    }
    cfg.update(over)
    path = tmp_path / "synth.json"
    path.write_text(json.dumps(cfg))
    return path


def train_config(tmp_path, data_dir, **over):
    cfg = {
        "dataset": {"path": str(data_dir / "train.csv"), "label_column": "label"},
        "arch": "2d",
        "train": {"total_steps": 300, "batch_size": 32, "labeled_fraction": 0.5, "log_every": 100},
        "seed": 13,
    }
    cfg.update(over)
    path = tmp_path / "train.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train once; reused by the downstream command tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data_dir, model_dir = root / "data", root / "model"
    assert run("synth", "--config", str(synth_config(root)), "--out-dir", str(data_dir)) == 0
    assert run("train", "--config", str(train_config(root, data_dir)), "--out-dir", str(model_dir)) == 0
    return root, data_dir, model_dir


def test_synth_writes_expected_files_and_is_deterministic(tmp_path):
    cfg = synth_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run("synth", "--config", str(cfg), "--out-dir", str(out1)) == 0
    assert run("synth", "--config", str(cfg), "--out-dir", str(out2)) == 0
    for name in ("train.csv", "test.csv", "novel.csv", "density.json", "manifest.json"):
        assert (out1 / name).exists(), name
        a, b = (out1 / name).read_bytes(), (out2 / name).read_bytes()
        assert (
            a.replace(str(out1).encode(), b"") == b.replace(str(out2).encode(), b"")
        ), f"{name} differs between identical runs"
    with open(out1 / "train.csv") as fh:
        labels = {row["label"] for row in csv.DictReader(fh)}
    assert labels == {"0", "1", "2", "3"}


def test_seed_is_mandatory(tmp_path):
    cfg = synth_config(tmp_path)
    doc = json.loads(cfg.read_text())
    del doc["seed"]
    cfg.write_text(json.dumps(doc))
    assert run("synth", "--config", str(cfg), "--out-dir", str(tmp_path / "out")) == 2


def test_unknown_config_key_is_rejected(tmp_path):
    cfg = synth_config(tmp_path, typo_field=1)
    assert run("synth", "--config", str(cfg), "--out-dir", str(tmp_path / "out")) == 2


def test_train_writes_model_log_and_manifest(pipeline):
    _, _, model_dir = pipeline
    assert (model_dir / "model.ndgan").exists()
    assert (model_dir / "train_log.csv").exists()
    manifest = json.loads((model_dir / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 13
    assert manifest["config"]["train"]["total_steps"] == 300


def test_train_rerun_from_manifest_is_bit_identical(pipeline, tmp_path):
    root, data_dir, model_dir = pipeline
    rerun = tmp_path / "rerun"
    assert run("train", "--config", str(model_dir / "manifest.json"), "--out-dir", str(rerun)) == 0
    assert sha256(rerun / "model.ndgan") == sha256(model_dir / "model.ndgan")
    assert sha256(rerun / "train_log.csv") == sha256(model_dir / "train_log.csv")


def test_train_missing_labels_with_labeled_fraction_fails_fast(pipeline, tmp_path):
    root, data_dir, _ = pipeline
    cfg = train_config(tmp_path, data_dir)
    doc = json.loads(cfg.read_text())
    doc["dataset"].pop("label_column")  # features only
    cfg.write_text(json.dumps(doc))
    assert run("train", "--config", str(cfg), "--out-dir", str(tmp_path / "out")) == 2


def test_train_divergence_exits_3(pipeline, tmp_path):
    root, data_dir, _ = pipeline
    cfg = train_config(tmp_path, data_dir)
    doc = json.loads(cfg.read_text())
    doc["train"]["lr"] = 1e200  # overflows the row-norm square into NaN weights
    doc["train"]["total_steps"] = 50
    cfg.write_text(json.dumps(doc))
    assert run("train", "--config", str(cfg), "--out-dir", str(tmp_path / "out")) == 3


def test_score_emits_predictions_and_requested_scores(pipeline, tmp_path):
    root, data_dir, model_dir = pipeline
    out = tmp_path / "scored"
    code = run(
        "score", "--model", str(model_dir / "model.ndgan"), "--data", str(data_dir / "novel.csv"),
        "--scorers", "nd-gan-ratio,entropy,max-prob,knn-2",
        "--knn-reference", str(data_dir / "train.csv"), "--label-column", "label",
        "--mark-novel", "1", "--seed", "1", "--out-dir", str(out),
    )
    assert code == 0
    with open(out / "scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {
        "example_id", "predicted_class", "fake_prob", "is_novel",
        "nd_gan_ratio", "entropy", "max_prob", "knn_2",
    }
    assert all(r["is_novel"] == "1" for r in rows)
    assert all(np.isfinite(float(r["nd_gan_ratio"])) for r in rows)
    assert all(0 <= int(r["predicted_class"]) <= 3 for r in rows)


def test_score_of_duplicated_row_is_identical(pipeline, tmp_path):
    root, data_dir, model_dir = pipeline
    dup = tmp_path / "dup.csv"
    dup.write_text("x0,x1\n0.5,0.25\n0.5,0.25\n")
    out = tmp_path / "dup_out"
    assert run(
        "score", "--model", str(model_dir / "model.ndgan"), "--data", str(dup),
        "--scorers", "nd-gan-ratio", "--seed", "1", "--out-dir", str(out),
    ) == 0
    with open(out / "scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["nd_gan_ratio"] == rows[1]["nd_gan_ratio"]


def test_score_knn_without_reference_is_a_validation_error(pipeline, tmp_path):
    root, data_dir, model_dir = pipeline
    code = run(
        "score", "--model", str(model_dir / "model.ndgan"), "--data", str(data_dir / "novel.csv"),
        "--scorers", "knn-1", "--seed", "1", "--out-dir", str(tmp_path / "out"),
    )
    assert code == 2


def test_eval_from_score_files(pipeline, tmp_path):
    root, data_dir, model_dir = pipeline
    nom_dir, nov_dir, eval_dir = tmp_path / "nom", tmp_path / "nov", tmp_path / "eval"
    for data, mark, out in ((data_dir / "test.csv", 0, nom_dir), (data_dir / "novel.csv", 1, nov_dir)):
        assert run(
            "score", "--model", str(model_dir / "model.ndgan"), "--data", str(data),
            "--label-column", "label", "--scorers", "nd-gan-ratio",
            "--mark-novel", str(mark), "--seed", "1", "--out-dir", str(out),
        ) == 0
    assert run(
        "eval", "--scores", str(nom_dir / "scores.csv"), "--scores", str(nov_dir / "scores.csv"),
        "--score-column", "nd_gan_ratio", "--alphas", "0.05,0.1", "--seed", "1", "--out-dir", str(eval_dir),
    ) == 0
    doc = json.loads((eval_dir / "metrics.json").read_text())
    assert 0.0 <= doc["auroc"] <= 1.0
    assert "fpr0.05" in doc["thresholds"]
    assert doc["full_scale_reference"]["nd-gan-ratio"]["per_holdout"][0] == 0.992
    assert (eval_dir / "roc_nd_gan_ratio.csv").exists()


def test_eval_single_class_ground_truth_is_rejected(pipeline, tmp_path):
    root, data_dir, model_dir = pipeline
    nov_dir = tmp_path / "only_novel"
    assert run(
        "score", "--model", str(model_dir / "model.ndgan"), "--data", str(data_dir / "novel.csv"),
        "--scorers", "nd-gan-ratio", "--mark-novel", "1", "--seed", "1", "--out-dir", str(nov_dir),
    ) == 0
    assert run(
        "eval", "--scores", str(nov_dir / "scores.csv"), "--score-column", "nd_gan_ratio",
        "--seed", "1", "--out-dir", str(tmp_path / "out"),
    ) == 2


def test_eval_holdout_mode_produces_table(pipeline, tmp_path):
    root, data_dir, _ = pipeline
    cfg = {
        "holdout": {
            "train_dataset": {"path": str(data_dir / "train.csv"), "label_column": "label"},
            "test_dataset": {"path": str(data_dir / "test.csv"), "label_column": "label", "split_tag": "test"},
            "arch": "2d",
            "train": {"total_steps": 150, "batch_size": 32, "labeled_fraction": 0.5, "log_every": 100},
            "holdout_classes": [0, 2],
            "scorers": ["nd-gan-ratio", "entropy"],
            "workers": 2,
        },
        "seed": 5,
    }
    path = tmp_path / "holdout.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "holdout_out"
    assert run("eval", "--config", str(path), "--out-dir", str(out)) == 0
    doc = json.loads((out / "metrics.json").read_text())
    splits = {r["split"] for r in doc["rows"]}
    assert splits == {"0", "2"}
    assert set(doc["means"]) == {"nd-gan-ratio", "entropy"}
    assert (out / "metrics.csv").exists()
    assert (out / "roc_nd_gan_ratio_holdout0.csv").exists()


def test_oracle_passes_on_valid_spec_and_respects_tolerance_flag(pipeline, tmp_path):
    root, data_dir, _ = pipeline
    out = tmp_path / "oracle"
    assert run(
        "oracle", "--density", str(data_dir / "density.json"), "--seed", "3", "--out-dir", str(out),
    ) == 0
    report = json.loads((out / "oracle_report.json").read_text())
    assert report["pass"] is True
    assert report["identity_residual"] < 1e-12
    assert (out / "dstar_grid.csv").exists()
    # impossible tolerance -> exit code 4
    assert run(
        "oracle", "--density", str(data_dir / "density.json"), "--tolerance", "0",
        "--seed", "3", "--out-dir", str(tmp_path / "oracle2"),
    ) == 4


def test_oracle_closed_form_check_on_1d_gaussians(tmp_path):
    spec = {
        "version": 1,
        "pi": 0.5,
        "data": {"weights": [1.0], "means": [[0.0]], "variances": [[1.0]]},
        "novel": {"weights": [1.0], "means": [[2.0]], "variances": [[1.0]]},
    }
    path = tmp_path / "gauss.json"
    path.write_text(json.dumps(spec))
    out = tmp_path / "out"
    assert run("oracle", "--density", str(path), "--seed", "7", "--out-dir", str(out)) == 0
    report = json.loads((out / "oracle_report.json").read_text())
    assert report["lr_auroc_closed_form"] == pytest.approx(0.92135, abs=1e-4)
    assert abs(report["lr_auroc_mc"] - report["lr_auroc_closed_form"]) <= 0.01


def test_oracle_malformed_spec_reports_json_path(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"version": 1, "pi": 0.5, "data": {"weights": [1.0]}, "novel": {}}))
    assert run("oracle", "--density", str(path), "--seed", "1", "--out-dir", str(tmp_path / "o")) == 2
    assert "$.data" in capsys.readouterr().err


def test_missing_out_dir_is_a_validation_error(tmp_path):
    cfg = synth_config(tmp_path)
    import os

    old = os.environ.pop(cli.ENV_OUT_DIR, None)
    try:
        assert run("synth", "--config", str(cfg)) == 2
    finally:
        if old is not None:
            os.environ[cli.ENV_OUT_DIR] = old


def test_env_var_supplies_default_out_dir(tmp_path, monkeypatch):
    cfg = synth_config(tmp_path)
    out = tmp_path / "env_out"
    monkeypatch.setenv(cli.ENV_OUT_DIR, str(out))
    assert run("synth", "--config", str(cfg)) == 0
    assert (out / "train.csv").exists()
