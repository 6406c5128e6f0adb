"""End-to-end command-line tests: every subcommand exercised against
real files in a temp directory, exit codes checked on each failure path,
and rerun determinism verified byte for byte."""

import json

import numpy as np
import pytest

from tabformer.cli import RunConfig, main
from tabformer.data import load_csv
from tabformer.errors import ConfigError
from tabformer.model import load_checkpoint


@pytest.fixture(scope="module")
def spec_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("specs") / "gen.json"
    doc = {
        "columns": [
            {"name": "x0", "kind": "numeric"},
            {"name": "x1", "kind": "numeric"},
            {"name": "x2", "kind": "numeric"},
        ],
        "weights": [6.0, 0.0, 0.0],
        "bias": 0.0,
        "seed": 7,
    }
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def data_path(spec_path, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "table.csv"
    rc = main(["synth", "--spec", spec_path, "--out", str(path), "--n", "160"])
    assert rc == 0
    return str(path)


def run_config_file(tmp_path, **overrides):
    doc = {
        "model": "logistic",
        "train_config": {"max_epochs": 12, "batch_size": 64, "patience": 4},
        "k_folds": 3,
    }
    doc.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_header_plus_n_rows(spec_path, tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["synth", "--spec", spec_path, "--out", str(out), "--n", "50"]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 51
    assert lines[0] == "x0,x1,x2,label"
    assert "prevalence" in capsys.readouterr().out


def test_synth_rerun_is_byte_identical(spec_path, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["synth", "--spec", spec_path, "--out", str(a), "--n", "80"])
    main(["synth", "--spec", spec_path, "--out", str(b), "--n", "80"])
    assert a.read_bytes() == b.read_bytes()


def test_synth_seed_flag_overrides_spec_seed(spec_path, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["synth", "--spec", spec_path, "--out", str(a), "--n", "80"])
    main(["synth", "--spec", spec_path, "--out", str(b), "--n", "80", "--seed", "99"])
    assert a.read_bytes() != b.read_bytes()


def test_synth_invalid_spec_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    rc = main(["synth", "--spec", str(bad), "--out", str(tmp_path / "x.csv"), "--n", "5"])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_synth_output_is_loadable(data_path):
    ds = load_csv(data_path, "label")
    assert ds.rows.shape == (160, 3)
    assert set(np.unique(ds.labels)) <= {0, 1}


def test_synth_missing_rate_fraction(tmp_path):
    spec = tmp_path / "gen.json"
    spec.write_text(
        json.dumps({
            "columns": [
                {"name": "lab", "kind": "numeric", "missing": True},
                {"name": "x1", "kind": "numeric"},
            ],
            "weights": [1.0, 0.0],
            "missing_rate": 0.2,
            "seed": 13,
        }),
        encoding="utf-8",
    )
    out = tmp_path / "t.csv"
    assert main(["synth", "--spec", str(spec), "--out", str(out), "--n", "4000"]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()[1:]
    empty = sum(1 for line in lines if line.split(",")[0] == "")
    assert abs(empty / 4000 - 0.2) < 0.02


# ---------------------------------------------------------------------------
# cv


def test_cv_writes_all_artifacts(data_path, tmp_path, capsys):
    cfg = run_config_file(tmp_path)
    out = tmp_path / "cv"
    rc = main([
        "cv", "--config", cfg, "--data", data_path, "--target", "label",
        "--out", str(out), "--seed", "3",
    ])
    assert rc == 0
    names = {p.name for p in out.iterdir()}
    expected = {"cv_report.json", "resolved_config.json"}
    for i in range(3):
        expected |= {f"fold_{i}_pr.csv", f"fold_{i}_trainlog.json"}
    assert names == expected

    report = json.loads((out / "cv_report.json").read_text(encoding="utf-8"))
    assert set(report["means"]) == {"accuracy", "precision", "recall", "f1", "auprc"}
    assert len(report["folds"]) == 3
    console = capsys.readouterr().out
    assert "f1" in console and "±" in console


def test_cv_rerun_is_byte_identical(data_path, tmp_path):
    cfg = run_config_file(tmp_path)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        rc = main([
            "cv", "--config", cfg, "--data", data_path, "--target", "label",
            "--out", str(out), "--seed", "3",
        ])
        assert rc == 0
        outs.append(out)
    for fname in ("cv_report.json", "fold_1_pr.csv", "fold_2_trainlog.json"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_cv_resolved_config_round_trips(data_path, tmp_path):
    cfg = run_config_file(tmp_path, threshold=0.6)
    out = tmp_path / "cv"
    # flag overrides the config file value
    rc = main([
        "cv", "--config", cfg, "--data", data_path, "--target", "label",
        "--out", str(out), "--threshold", "0.4",
    ])
    assert rc == 0
    doc = json.loads((out / "resolved_config.json").read_text(encoding="utf-8"))
    resolved = RunConfig.from_dict(doc)
    assert resolved.threshold == 0.4
    assert resolved.model == "logistic"
    assert resolved.k_folds == 3
    assert resolved.data == data_path
    # echo survives another round trip unchanged
    assert RunConfig.from_dict(resolved.to_dict()) == resolved


def test_cv_missing_data_setting_exits_2(tmp_path, capsys):
    rc = main(["cv", "--target", "label", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "data" in capsys.readouterr().err


def test_cv_unknown_config_field_exits_2(data_path, tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"modle": "logistic"}), encoding="utf-8")
    rc = main([
        "cv", "--config", str(path), "--data", data_path, "--target", "label",
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 2


def test_cv_k_exceeding_class_count_exits_3(data_path, tmp_path):
    cfg = run_config_file(tmp_path, k_folds=150)
    rc = main([
        "cv", "--config", cfg, "--data", data_path, "--target", "label",
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 3


def test_cv_k_below_two_exits_2(data_path, tmp_path):
    rc = main([
        "cv", "--data", data_path, "--target", "label", "--model", "logistic",
        "--k-folds", "1", "--out", str(tmp_path / "o"),
    ])
    assert rc == 2


def test_cv_missing_file_exits_3(tmp_path, capsys):
    rc = main([
        "cv", "--data", str(tmp_path / "nope.csv"), "--target", "label",
        "--model", "logistic", "--out", str(tmp_path / "o"),
    ])
    assert rc == 3
    assert "data error" in capsys.readouterr().err


def test_cv_bad_target_column_exits_3(data_path, tmp_path):
    cfg = run_config_file(tmp_path)
    rc = main([
        "cv", "--config", cfg, "--data", data_path, "--target", "wrong",
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 3


# ---------------------------------------------------------------------------
# train


@pytest.fixture(scope="module")
def trained_dir(data_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    cfg = out / "run.json"
    cfg.write_text(
        json.dumps({
            "model": "logistic",
            "train_config": {
                "lr": 0.05, "max_epochs": 60, "batch_size": 64, "patience": 10,
            },
        }),
        encoding="utf-8",
    )
    rc = main([
        "train", "--config", str(cfg), "--data", data_path, "--target", "label",
        "--out", str(out), "--seed", "5",
    ])
    assert rc == 0
    return out


def test_train_artifacts(trained_dir, data_path):
    for name in ("model.json", "model.bin", "trainlog.json", "resolved_config.json"):
        assert (trained_dir / name).exists()
    log = json.loads((trained_dir / "trainlog.json").read_text(encoding="utf-8"))
    assert log["epochs"] >= 1
    assert log["best_epoch"] >= 1

    model = load_checkpoint(str(trained_dir / "model"))
    ds = load_csv(data_path, "label")
    assert model.schema.fingerprint() == ds.schema.fingerprint()
    # stamped stats make the checkpoint self-contained
    assert all(c.mean is not None for c in model.schema.columns if c.kind == "numeric")


def test_train_rerun_is_byte_identical(trained_dir, data_path, tmp_path):
    out = tmp_path / "again"
    rc = main([
        "train", "--config", str(trained_dir / "run.json"), "--data", data_path,
        "--target", "label", "--out", str(out), "--seed", "5",
    ])
    assert rc == 0
    for name in ("model.bin", "model.json", "trainlog.json"):
        assert (out / name).read_bytes() == (trained_dir / name).read_bytes()


def test_train_checkpoint_predicts(trained_dir, data_path):
    from tabformer.data import apply_standardizer, standardizer_from_schema

    model = load_checkpoint(str(trained_dir / "model"))
    ds = load_csv(data_path, "label")
    X = apply_standardizer(ds.rows, standardizer_from_schema(model.schema))
    probs = model.predict_proba(X)
    assert probs.shape == (160,)
    assert np.all((probs > 0) & (probs < 1))
    preds = probs > 0.5
    assert (preds == ds.labels.astype(bool)).mean() > 0.8


# ---------------------------------------------------------------------------
# importance


def test_importance_artifacts_and_top_n(trained_dir, data_path, tmp_path, capsys):
    out = tmp_path / "imp"
    rc = main([
        "importance", "--data", data_path, "--target", "label",
        "--checkpoint", str(trained_dir / "model"), "--out", str(out),
        "--k-folds", "4", "--fold", "1", "--repeats", "3", "--top-n", "2",
        "--seed", "5",
    ])
    assert rc == 0
    assert "baseline F1" in capsys.readouterr().out

    doc = json.loads((out / "importance.json").read_text(encoding="utf-8"))
    assert len(doc["features"]) == 3
    assert doc["repeats"] == 3
    names_by_rank = [f["name"] for f in doc["features"]]
    assert names_by_rank[0] == "x0"  # the only active feature

    csv_lines = (out / "importance.csv").read_text(encoding="utf-8").splitlines()
    assert csv_lines[0] == "feature,mean_drop"
    assert len(csv_lines) == 3  # header + top 2


def test_importance_identity_check_all_zero(trained_dir, data_path, tmp_path):
    out = tmp_path / "imp"
    rc = main([
        "importance", "--data", data_path, "--target", "label",
        "--checkpoint", str(trained_dir / "model"), "--out", str(out),
        "--identity-check",
    ])
    assert rc == 0
    doc = json.loads((out / "importance.json").read_text(encoding="utf-8"))
    assert all(f["mean_drop"] == 0.0 for f in doc["features"])


def test_importance_schema_mismatch_exits_3(trained_dir, tmp_path):
    other = tmp_path / "other.csv"
    other.write_text("a,b,label\n1.0,2.0,0\n3.0,4.0,1\n", encoding="utf-8")
    rc = main([
        "importance", "--data", str(other), "--target", "label",
        "--checkpoint", str(trained_dir / "model"), "--out", str(tmp_path / "o"),
    ])
    assert rc == 3


def test_importance_fold_out_of_range_exits_2(trained_dir, data_path, tmp_path):
    rc = main([
        "importance", "--data", data_path, "--target", "label",
        "--checkpoint", str(trained_dir / "model"), "--out", str(tmp_path / "o"),
        "--fold", "9",
    ])
    assert rc == 2


def test_importance_missing_checkpoint_setting_exits_2(data_path, tmp_path):
    rc = main([
        "importance", "--data", data_path, "--target", "label",
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 2


# ---------------------------------------------------------------------------
# config plumbing


def test_run_config_rejects_unknown_fields():
    with pytest.raises(ConfigError, match="unknown config fields"):
        RunConfig.from_dict({"learning_rate": 0.1})


def test_unknown_model_kind_exits_2(data_path, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "forest"}), encoding="utf-8")
    rc = main([
        "cv", "--config", str(cfg), "--data", data_path, "--target", "label",
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 2
