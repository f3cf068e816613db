"""End-to-end tests for the command line interface."""

import csv
import json

import numpy as np
import pytest

from graphdm import cli, data


def _base_config(out_dir, **extra):
    conf = {
        "dataset": "ba-motif",
        "out": str(out_dir),
        "dataset_size": 40,
        "iterations": 2,
        "restarts": 1,
        "graphs_per_class": 2,
        "train_batch": 8,
        "hidden_dim": 8,
        "surrogate_epochs": 5,
        "reps": 2,
    }
    conf.update(extra)
    return conf


def _write_config(tmp_path, out_dir, name="config.json", **extra):
    path = tmp_path / name
    path.write_text(json.dumps(_base_config(out_dir, **extra)))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """One tiny but complete run shared by the eval and export tests."""
    tmp = tmp_path_factory.mktemp("run")
    out = tmp / "artifacts"
    conf = _write_config(tmp, out)
    assert cli.main(["run", "--config", str(conf)]) == 0
    return out


class TestGenData:
    def test_writes_reproducible_file(self, tmp_path, capsys):
        out = tmp_path / "shape.json"
        assert cli.main(["gen-data", "shape", "12", "0", "--out", str(out)]) == 0
        assert "12 graphs" in capsys.readouterr().out
        first = out.read_bytes()
        assert cli.main(["gen-data", "shape", "12", "0", "--out", str(out)]) == 0
        assert out.read_bytes() == first
        ds = data.load_dataset(out)
        assert len(ds.graphs) == 12
        assert ds.num_classes == 4

    def test_unknown_dataset_exits_2(self, tmp_path, capsys):
        assert cli.main(["gen-data", "triangles", "10", "0",
                         "--out", str(tmp_path / "x.json")]) == 2
        err = capsys.readouterr().err
        assert "triangles" in err
        assert "ba-motif" in err and "shape" in err


class TestRun:
    def test_artifacts_present(self, run_dir):
        for name in ("config.json", "interpretations.json", "model.json",
                     "training_log.csv"):
            assert (run_dir / name).exists()

    def test_config_hash_embedded_everywhere(self, run_dir):
        conf = json.loads((run_dir / "config.json").read_text())
        interp = json.loads((run_dir / "interpretations.json").read_text())
        model = json.loads((run_dir / "model.json").read_text())
        h = conf["config_hash"]
        assert len(h) == 64
        assert interp["config_hash"] == h
        assert model["config_hash"] == h

    def test_training_log_layout(self, run_dir):
        with open(run_dir / "training_log.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["restart", "phase", "iteration", "ce_loss",
                           "dm_class0", "dm_class1", "feat_class0", "feat_class1",
                           "sparsity_class0", "sparsity_class1"]
        assert len(rows) == 1 + 2  # restarts * iterations data rows
        assert rows[1][1] == "joint"
        float(rows[1][3])  # ce parses
        float(rows[1][4])  # dm parses

    def test_prints_restart_accuracy(self, tmp_path, capsys):
        out = tmp_path / "arts"
        conf = _write_config(tmp_path, out)
        assert cli.main(["run", "--config", str(conf)]) == 0
        printed = capsys.readouterr().out
        assert "restart 0" in printed
        assert "train acc" in printed

    def test_deterministic_rerun_is_byte_identical(self, tmp_path):
        out = tmp_path / "arts"
        conf = _write_config(tmp_path, out)
        assert cli.main(["run", "--config", str(conf)]) == 0
        first = {name: (out / name).read_bytes()
                 for name in ("interpretations.json", "model.json",
                              "training_log.csv", "config.json")}
        assert cli.main(["run", "--config", str(conf)]) == 0
        for name, blob in first.items():
            assert (out / name).read_bytes() == blob

    def test_seed_override_changes_interpretations(self, tmp_path):
        out = tmp_path / "arts"
        conf = _write_config(tmp_path, out)
        assert cli.main(["run", "--config", str(conf)]) == 0
        base = json.loads((out / "interpretations.json").read_text())
        assert cli.main(["run", "--config", str(conf), "--seed", "7"]) == 0
        other = json.loads((out / "interpretations.json").read_text())
        assert base["interpretations"] != other["interpretations"]

    def test_frozen_variant_logs_constant_ce(self, tmp_path):
        out = tmp_path / "arts"
        conf = _write_config(tmp_path, out, iterations=3)
        assert cli.main(["run", "--config", str(conf), "--variant", "frozen"]) == 0
        with open(out / "training_log.csv") as fh:
            rows = list(csv.DictReader(fh))
        ces = {row["ce_loss"] for row in rows}
        assert len(ces) == 1

    def test_missing_required_field_exits_2(self, tmp_path, capsys):
        conf = tmp_path / "config.json"
        body = _base_config(tmp_path / "arts")
        del body["dataset"]
        conf.write_text(json.dumps(body))
        assert cli.main(["run", "--config", str(conf)]) == 2
        assert "dataset" in capsys.readouterr().err

    def test_unknown_field_exits_2(self, tmp_path, capsys):
        conf = tmp_path / "config.json"
        body = _base_config(tmp_path / "arts", learning_rate=0.1)
        conf.write_text(json.dumps(body))
        assert cli.main(["run", "--config", str(conf)]) == 2
        assert "learning_rate" in capsys.readouterr().err

    def test_invalid_value_exits_2(self, tmp_path):
        conf = tmp_path / "config.json"
        conf.write_text(json.dumps(_base_config(tmp_path / "arts", interp_lr=-1.0)))
        assert cli.main(["run", "--config", str(conf)]) == 2


class TestEval:
    def test_writes_metrics(self, run_dir, tmp_path, capsys):
        out = tmp_path / "scores"
        assert cli.main(["eval",
                         "--interps", str(run_dir / "interpretations.json"),
                         "--model", str(run_dir / "model.json"),
                         "--dataset", "ba-motif",
                         "--reps", "2", "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "fidelity" in printed and "utility" in printed
        payload = json.loads((out / "metrics.json").read_text())
        run_hash = json.loads((run_dir / "config.json").read_text())["config_hash"]
        assert payload["config_hash"] == run_hash
        assert len(payload["fidelity"]["runs"]) == 2
        with open(out / "metrics.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3

    def test_default_out_is_interps_directory(self, run_dir):
        assert cli.main(["eval",
                         "--interps", str(run_dir / "interpretations.json"),
                         "--model", str(run_dir / "model.json"),
                         "--dataset", "ba-motif", "--reps", "2"]) == 0
        assert (run_dir / "metrics.json").exists()

    def test_self_surrogate_fidelity_is_100(self, run_dir, tmp_path):
        out = tmp_path / "self"
        assert cli.main(["eval",
                         "--interps", str(run_dir / "interpretations.json"),
                         "--model", str(run_dir / "model.json"),
                         "--dataset", "ba-motif",
                         "--reps", "3", "--out", str(out),
                         "--self-surrogate"]) == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["fidelity"]["runs"] == [100.0, 100.0, 100.0]
        assert payload["fidelity"]["std"] == 0.0

    def test_mismatched_artifacts_exit_1(self, run_dir, tmp_path, capsys):
        other_out = tmp_path / "other"
        conf = _write_config(tmp_path, other_out, name="other.json", seed=9)
        assert cli.main(["run", "--config", str(conf)]) == 0
        assert cli.main(["eval",
                         "--interps", str(other_out / "interpretations.json"),
                         "--model", str(run_dir / "model.json"),
                         "--dataset", "ba-motif", "--reps", "2",
                         "--out", str(tmp_path / "scores")]) == 1
        assert "mismatch" in capsys.readouterr().err


class TestExport:
    def test_dot_files(self, run_dir, tmp_path):
        out = tmp_path / "dot"
        assert cli.main(["export", "--interps",
                         str(run_dir / "interpretations.json"),
                         "--format", "dot", "--out", str(out)]) == 0
        files = sorted(p.name for p in out.iterdir())
        assert files == ["class0_graph0.dot", "class0_graph1.dot",
                         "class1_graph0.dot", "class1_graph1.dot"]
        text = (out / "class0_graph0.dot").read_text()
        lines = text.strip().split("\n")
        assert lines[0] == "graph class0_graph0 {"
        assert lines[-1] == "}"
        assert '  0 [label="0"];' in lines
        assert any(" -- " in line for line in lines)

    def test_json_files(self, run_dir, tmp_path):
        out = tmp_path / "json"
        assert cli.main(["export", "--interps",
                         str(run_dir / "interpretations.json"),
                         "--format", "json", "--out", str(out)]) == 0
        doc = json.loads((out / "class1_graph0.json").read_text())
        assert set(doc) == {"n", "edges", "label", "features"}
        assert doc["label"] == 1
        assert doc["n"] == 25
        assert doc["features"] is None  # index features carry no meaning
        for a, b in doc["edges"]:
            assert 0 <= a < b < 25

    def test_atom_labels_for_molecule_datasets(self, tmp_path):
        payload = {
            "dataset": "mutag",
            "num_classes": 1,
            "feature_dim": 7,
            "sparsity_target": 0.5,
            "semantic_features": True,
            "config": None,
            "config_hash": None,
            "interpretations": [{
                "class_id": 0, "m": 2, "tau": 1.0,
                "omega": [-1e9, 3.0, 3.0, -1e9],
                "features": [[1, 0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1, 0]],
                "edges": [[0, 1]],
            }],
        }
        src = tmp_path / "interps.json"
        src.write_text(json.dumps(payload))
        out = tmp_path / "dot"
        assert cli.main(["export", "--interps", str(src),
                         "--format", "dot", "--out", str(out)]) == 0
        text = (out / "class0_graph0.dot").read_text()
        assert '0 [label="C"];' in text
        assert '1 [label="Cl"];' in text
        assert "  0 -- 1;" in text


class TestGradCheck:
    def test_passes(self, capsys):
        assert cli.main(["grad-check"]) == 0
        printed = capsys.readouterr().out
        assert "all gradient checks passed" in printed
        assert "sym_normalize" in printed

    def test_seed_flag(self, capsys):
        assert cli.main(["grad-check", "--seed", "3"]) == 0


class TestParser:
    def test_no_arguments_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train"])
        assert exc.value.code == 2

    def test_missing_config_file_is_config_error(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == 2
        assert "does not exist" in capsys.readouterr().err
