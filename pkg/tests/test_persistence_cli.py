"""Experiment config, checkpoint format, report writers, and the CLI."""

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from senn.cli import main
from senn.estimator import SennClassifier
from senn.persistence import (ExperimentConfig, ShapeMismatchError,
                              TruncatedBlobError, VersionMismatchError,
                              load_checkpoint, save_checkpoint,
                              write_aggregate_csv, write_jsonl, write_pgm)


@pytest.fixture(scope="module")
def tiny_clf(bc_split):
    return SennClassifier(lam=1e-4, epochs=5, random_state=0).fit(
        bc_split.X_train[:100], bc_split.y_train[:100],
        bc_split.X_val, bc_split.y_val)


class TestExperimentConfig:
    def test_unknown_fields_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"dataset": "iris", "bogus": 1}))
        with pytest.raises(ValueError, match="bogus"):
            ExperimentConfig.from_json(path)

    def test_hash_stable_and_sensitive(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"dataset": "iris", "lam": 0.01}))
        a = ExperimentConfig.from_json(path).hash()
        b = ExperimentConfig.from_json(path).hash()
        c = ExperimentConfig.from_json(path, overrides={"seed": 1}).hash()
        assert a == b and a != c

    def test_seed_override(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"dataset": "iris"}))
        assert ExperimentConfig.from_json(path, overrides={"seed": 7}).seed == 7


class TestCheckpoint:
    def test_roundtrip_bit_identical_predictions(self, tiny_clf, tmp_path):
        save_checkpoint(tiny_clf, tmp_path / "ckpt")
        loaded, manifest = load_checkpoint(tmp_path / "ckpt")
        X = np.random.default_rng(0).standard_normal((100, 30))
        np.testing.assert_array_equal(tiny_clf.predict_proba(X),
                                      loaded.predict_proba(X))
        np.testing.assert_array_equal(tiny_clf.predict(X), loaded.predict(X))
        assert manifest["format_version"] == 1

    def test_byte_identical_for_identical_models(self, tiny_clf, tmp_path):
        save_checkpoint(tiny_clf, tmp_path / "a")
        save_checkpoint(tiny_clf, tmp_path / "b")
        assert (tmp_path / "a/params.bin").read_bytes() == \
            (tmp_path / "b/params.bin").read_bytes()
        assert (tmp_path / "a/manifest.json").read_text() == \
            (tmp_path / "b/manifest.json").read_text()

    def test_truncated_blob_detected(self, tiny_clf, tmp_path):
        path = save_checkpoint(tiny_clf, tmp_path / "ckpt")
        blob = (path / "params.bin").read_bytes()
        (path / "params.bin").write_bytes(blob[:-8])
        with pytest.raises(TruncatedBlobError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes_detected(self, tiny_clf, tmp_path):
        path = save_checkpoint(tiny_clf, tmp_path / "ckpt")
        blob = (path / "params.bin").read_bytes()
        (path / "params.bin").write_bytes(blob + b"\0" * 8)
        with pytest.raises(TruncatedBlobError, match="trailing"):
            load_checkpoint(path)

    def test_version_mismatch_detected(self, tiny_clf, tmp_path):
        path = save_checkpoint(tiny_clf, tmp_path / "ckpt")
        manifest = json.loads((path / "manifest.json").read_text())
        manifest["format_version"] = 99
        (path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(VersionMismatchError, match="99"):
            load_checkpoint(path)

    def test_shape_mismatch_names_tensor(self, tiny_clf, tmp_path):
        path = save_checkpoint(tiny_clf, tmp_path / "ckpt")
        manifest = json.loads((path / "manifest.json").read_text())
        manifest["tensors"][0]["shape"] = [1, 1]
        (path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ShapeMismatchError,
                           match=manifest["tensors"][0]["name"]):
            load_checkpoint(path)


class TestReportWriters:
    def test_jsonl_roundtrip(self, tmp_path):
        records = [{"a": 1, "v": np.float64(2.5)}, {"a": 2, "arr": np.arange(3)}]
        path = write_jsonl(tmp_path / "r.jsonl", records)
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert lines[0]["v"] == 2.5 and lines[1]["arr"] == [0, 1, 2]

    def test_aggregate_csv_header_and_quartiles(self, tmp_path):
        path = write_aggregate_csv(tmp_path / "agg.csv", [
            ("d", "m", "metric", [1.0, 2.0, 3.0, 4.0]),
            ("d", "empty", "metric", []),
        ])
        rows = list(csv.reader(path.read_text().splitlines()))
        assert rows[0] == ["dataset", "method", "metric", "q1", "median", "q3",
                           "mean", "n"]
        assert rows[1][:3] == ["d", "m", "metric"]
        assert float(rows[1][4]) == 2.5 and rows[1][7] == "4"
        assert rows[2][7] == "0"

    def test_pgm_writer(self, tmp_path):
        img = np.linspace(0, 1, 784)
        path = write_pgm(tmp_path / "x.pgm", img)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n28 28\n255\n")
        assert len(raw) == len(b"P5\n28 28\n255\n") + 784


def make_config(tmp_path, **overrides):
    cfg = {"dataset": "iris", "manifest": "data/manifest.json", "epochs": 4,
           "n_eval_points": 3, "ascent_steps": 10, "ascent_restarts": 1,
           "budget_other": 20, "budget_lime": 15, "explainer_samples": 30}
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One trained CLI workspace shared by the command tests."""
    tmp = tmp_path_factory.mktemp("cli")
    config = make_config(tmp)
    out = tmp / "out"
    result = CliRunner().invoke(main, ["train", "--config", str(config),
                                       "--out", str(out)])
    assert result.exit_code == 0, result.output
    return config, out


class TestCli:
    def test_train_outputs(self, cli_run):
        config, out = cli_run
        assert (out / "checkpoint/manifest.json").exists()
        assert (out / "checkpoint/params.bin").exists()
        log = [json.loads(line) for line in
               (out / "train_log.jsonl").read_text().splitlines()]
        assert len(log) == 4
        assert {"epoch", "classification", "robustness", "val_loss",
                "val_accuracy", "config_hash", "seed"} <= set(log[0])

    def test_train_rerun_identical_log(self, cli_run, tmp_path):
        config, out = cli_run
        out2 = tmp_path / "out2"
        result = CliRunner().invoke(main, ["train", "--config", str(config),
                                           "--out", str(out2)])
        assert result.exit_code == 0, result.output
        assert (out / "train_log.jsonl").read_text() == \
            (out2 / "train_log.jsonl").read_text()
        assert (out / "checkpoint/params.bin").read_bytes() == \
            (out2 / "checkpoint/params.bin").read_bytes()

    def test_explain_record(self, cli_run):
        config, out = cli_run
        result = CliRunner().invoke(main, ["explain", "--config", str(config),
                                           "--out", str(out), "--index", "1"])
        assert result.exit_code == 0, result.output
        record = json.loads((out / "explanation_1.json").read_text())
        assert len(record["concept_values"]) == 4
        assert len(record["relevances"]) == 4
        # sum aggregator: contribution columns sum to the logits; consistency
        # of the emitted record with the checkpointed model
        contributions = np.array(record["contributions"])
        loaded, _ = load_checkpoint(out / "checkpoint")
        from senn.data import load_dataset
        split = load_dataset("iris", "data/manifest.json", seed=0)
        logits = loaded.decision_function(split.X_test[1:2])[0]
        np.testing.assert_allclose(contributions.sum(axis=0), logits, atol=1e-9)

    def test_explain_index_out_of_range(self, cli_run):
        config, out = cli_run
        result = CliRunner().invoke(main, ["explain", "--config", str(config),
                                           "--out", str(out), "--index", "9999"])
        assert result.exit_code != 0
        assert "out of range" in result.output

    def test_eval_faithfulness_report(self, cli_run):
        config, out = cli_run
        result = CliRunner().invoke(main, [
            "eval", "--config", str(config), "--out", str(out),
            "--metric", "faithfulness", "--explainers", "senn,saliency,elrp"])
        assert result.exit_code == 0, result.output
        records = [json.loads(line) for line in
                   (out / "report_faithfulness.jsonl").read_text().splitlines()]
        senn_rows = [r for r in records if r["method"] == "senn"]
        assert len(senn_rows) == 3
        assert {"dataset", "method", "point_id", "metric", "value",
                "config_hash", "seed"} <= set(senn_rows[0])
        # elrp is incompatible with the composite model: skipped with warning
        skipped = [r for r in records if r.get("skipped")]
        assert skipped and skipped[0]["method"] == "elrp"
        rows = list(csv.reader(
            (out / "aggregate_faithfulness.csv").read_text().splitlines()))
        assert rows[0] == ["dataset", "method", "metric", "q1", "median", "q3",
                           "mean", "n"]

    def test_eval_stability_includes_argmax(self, cli_run):
        config, out = cli_run
        result = CliRunner().invoke(main, [
            "eval", "--config", str(config), "--out", str(out),
            "--metric", "stability-continuous", "--explainers", "senn"])
        assert result.exit_code == 0, result.output
        records = [json.loads(line) for line in
                   (out / "report_stability-continuous.jsonl").read_text().splitlines()]
        assert all("argmax_point" in r for r in records)
        assert all(r["value"] >= 0 for r in records)

    def test_eval_rerun_bit_identical(self, cli_run, tmp_path):
        config, out = cli_run
        args = ["eval", "--config", str(config), "--metric", "gaussian-probe",
                "--explainers", "senn,saliency"]
        r1 = CliRunner().invoke(main, args + ["--out", str(out)])
        out2 = tmp_path / "again"
        (out2 / "checkpoint").mkdir(parents=True)
        for name in ("manifest.json", "params.bin"):
            (out2 / "checkpoint" / name).write_bytes(
                (out / "checkpoint" / name).read_bytes())
        r2 = CliRunner().invoke(main, args + ["--out", str(out2)])
        assert r1.exit_code == 0 and r2.exit_code == 0
        assert (out / "report_gaussian-probe.jsonl").read_text() == \
            (out2 / "report_gaussian-probe.jsonl").read_text()

    def test_unknown_explainer_rejected(self, cli_run):
        config, out = cli_run
        result = CliRunner().invoke(main, [
            "eval", "--config", str(config), "--out", str(out),
            "--explainers", "senn,wizardry"])
        assert result.exit_code != 0
        assert "wizardry" in result.output

    def test_adversarial_record(self, cli_run):
        config, out = cli_run
        result = CliRunner().invoke(main, [
            "adversarial", "--config", str(config), "--out", str(out),
            "--explainer", "senn", "--index", "0"])
        assert result.exit_code == 0, result.output
        record = json.loads((out / "adversarial_senn_0.json").read_text())
        assert record["metric"] == "adversarial" and record["value"] >= 0
        e0 = np.array(record["explanation_at_x"])
        e1 = np.array(record["explanation_at_argmax"])
        assert e0.shape == e1.shape

    def test_prototypes_record(self, cli_run):
        config, out = cli_run
        result = CliRunner().invoke(main, [
            "prototypes", "--config", str(config), "--out", str(out),
            "--count", "3"])
        assert result.exit_code == 0, result.output
        record = json.loads((out / "prototypes.json").read_text())
        assert len(record["concepts"]) == 4  # identity encoder: k == n
        assert all(len(c["indices"]) == 3 for c in record["concepts"])
