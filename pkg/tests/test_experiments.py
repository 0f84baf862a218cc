"""
Tests for the experiment runner, result tables and the command-line driver.
"""

import json
import math
import pytest
import sys
from pathlib import Path

import numpy as np
import pandas as pd

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from config.settings import validate_config
from data.generators import load_servers, split_with_overlap, write_servers
from experiments.cli import _overrides, build_parser, main
from experiments.runner import (
    RESULT_COLUMNS,
    ExperimentRunner,
    ResultTable,
    run_experiment,
    run_sweep,
)
from sketches.dataset import Dataset, union_all


def _config(text, **overrides):
    return validate_config(text, {k: str(v) for k, v in overrides.items()})


FK_SMALL = "protocol = fk\nn = 64\ns = 2\nk = 2\neps = 0.25\ntrials = 2"


class TestGenerators:
    """Tests for instance helpers."""

    def test_server_csv_round_trip(self, tmp_path):
        """Test server vectors survive server_<j> CSV columns."""
        vectors = [np.array([1.0, 2.0, 0.0]), np.array([0.0, 5.0, 1.0])]
        path = tmp_path / "servers.csv"
        write_servers(vectors, path)
        loaded = load_servers(path)
        assert [v.tolist() for v in loaded] == [v.tolist() for v in vectors]

    def test_negative_servers_rejected(self, tmp_path):
        """Test negative entries in a server file."""
        path = tmp_path / "servers.csv"
        pd.DataFrame({"server_0": [1.0, -1.0]}).to_csv(path, index=False)
        with pytest.raises(ValueError):
            load_servers(path)

    def test_split_with_overlap(self):
        """Test pieces conform and cover the data."""
        data = Dataset.from_matrix(np.random.default_rng(0).standard_normal((30, 2)))
        pieces = split_with_overlap(data, 3, 0.5, seed=1)
        assert sum(len(p) for p in pieces) == 30 + 15
        assert sorted(union_all(pieces).keys) == sorted(data.keys)


class TestResultTable:
    """Tests for result tables."""

    def test_missing_columns(self):
        """Test tables need every result column."""
        with pytest.raises(ValueError, match="Missing required columns"):
            ResultTable(pd.DataFrame({"protocol": ["fk"]}))

    def test_csv_and_json(self, tmp_path):
        """Test CSV round trip and the JSON payload."""
        table = run_experiment(_config(FK_SMALL))
        table.to_csv(tmp_path / "rows.csv")
        loaded = ResultTable.from_csv(tmp_path / "rows.csv")
        assert len(loaded) == 2
        assert loaded.summary()["total_words"] == table.summary()["total_words"]
        table.to_json(tmp_path / "rows.json")
        payload = json.loads((tmp_path / "rows.json").read_text())
        assert len(payload["rows"]) == 2
        assert payload["summary"]["trials"] == 2


class TestExperimentRunner:
    """Tests for per-protocol trials."""

    def test_fk_rows(self):
        """Test F_k trials report two rounds and accurate estimates."""
        table = run_experiment(_config(FK_SMALL))
        df = table.df
        assert list(df.columns) == RESULT_COLUMNS
        assert df["rounds"].tolist() == [2, 2]
        assert df["error"].tolist() == ["", ""]
        assert table.summary()["max_rounds"] == 2
        assert np.all(df["rel_err"] <= 0.5)

    def test_deterministic(self):
        """Test equal configs give equal tables."""
        a = run_experiment(_config(FK_SMALL)).df
        b = run_experiment(_config(FK_SMALL, jobs=2)).df
        pd.testing.assert_frame_equal(a, b)

    def test_diagnostics_note(self):
        """Test per-copy diagnostics land in the note column."""
        table = run_experiment(_config(FK_SMALL, trials=1, diagnostics="true"))
        note = table.df["note"].iloc[0]
        assert note.count(";") == 256 - 1

    def test_error_rows(self, tmp_path):
        """Test a failing trial becomes an error row."""
        cfg = _config("protocol = sample\ngenerator = file\ntrials = 2", input=tmp_path / "missing.csv")
        table = run_experiment(cfg)
        assert table.summary()["errors"] == 2
        assert len(table.errored) == 2
        assert not table.df["ok"].any()

    def test_file_servers(self, tmp_path):
        """Test server vectors read from a file with ground truth."""
        path = tmp_path / "servers.csv"
        rng = np.random.default_rng(0)
        write_servers([rng.integers(0, 10, 64).astype(float) for _ in range(2)], path)
        cfg = _config("protocol = fk\nk = 2\neps = 0.25\ntrials = 1\ngenerator = file\ntruth = true", input=path)
        row = run_experiment(cfg).df.iloc[0]
        assert row["error"] == ""
        assert not math.isnan(row["truth"])

    def test_sample(self):
        """Test sampler trials."""
        row = run_experiment(_config("protocol = sample\nn = 16\ns = 2\neps = 0.2\ntrials = 1")).df.iloc[0]
        assert row["error"] == ""
        assert row["rounds"] == 1

    def test_hoc(self):
        """Test correlation trials against brute force."""
        cfg = _config("protocol = hoc\nn = 4\nk = 2\ns = 2\nrows = 3\neps = 0.3\nfn = pow:2\ntrials = 1")
        row = run_experiment(cfg).df.iloc[0]
        assert row["error"] == ""
        assert row["note"].startswith("peak_records=")
        assert row["rounds"] == 2

    @pytest.mark.parametrize("protocol,extra", [
        ("embed", "d = 3"),
        ("regress", "d = 4"),
        ("lra", "d = 5\nk = 2"),
    ])
    def test_sketch_protocols(self, protocol, extra):
        """Test sketch-based trials run cleanly."""
        cfg = _config(f"protocol = {protocol}\nrows = 100\ns = 2\neps = 0.5\ndelta = 0.1\ntrials = 1\n{extra}")
        row = run_experiment(cfg).df.iloc[0]
        assert row["error"] == ""
        assert row["total_words"] > 0
        if protocol == "regress":
            assert row["rel_err"] >= -1e-9

    def test_congest(self):
        """Test a small propagation trial."""
        cfg = _config("protocol = congest\ngraph = path\ngraph_size = 3\nrows = 20\nd = 3\n"
                      "rounds = 1\neps = 0.3\ntrials = 1")
        row = run_experiment(cfg).df.iloc[0]
        assert row["error"] == ""
        assert row["rounds"] == 1
        assert "attempts=" in row["note"]

    def test_build_graph(self):
        """Test the synthetic topologies."""
        for graph, nodes in [("grid", 9), ("star", 4), ("diamond", 4), ("path", 3)]:
            cfg = _config(f"protocol = congest\ngraph = {graph}\ngraph_size = 3\nrows = 5\nd = 2\neps = 0.3")
            assert len(ExperimentRunner(cfg).build_graph(0)) == nodes


class TestSweep:
    """Tests for parameter sweeps."""

    def test_server_sweep(self):
        """Test words grow with the server count."""
        cfg = _config(FK_SMALL, trials=1, sweep_field="s", sweep_values="2,4")
        table = run_sweep(cfg)
        assert table.df["value"].tolist() == [2, 4]
        ratios = table.df["words_ratio"].tolist()
        assert math.isnan(ratios[0])
        assert ratios[1] > 1
        assert table.summary()["errors"] == 0

    def test_needs_values(self):
        """Test an empty sweep."""
        with pytest.raises(ValueError):
            run_sweep(_config(FK_SMALL))


class TestCli:
    """Tests for the command-line driver."""

    FK_ARGS = ["--trials", "1", "fk", "--n", "64", "--servers", "2", "--k", "2", "--eps", "0.25"]

    def test_fk_run(self, tmp_path, capsys):
        """Test a successful run prints its summary and writes the CSV."""
        csv = tmp_path / "fk.csv"
        assert main(["--csv", str(csv)] + self.FK_ARGS) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["trials"] == 1
        assert summary["max_rounds"] == 2
        assert len(pd.read_csv(csv)) == 1

    def test_config_error(self, capsys):
        """Test validation errors go to stderr with exit code 1."""
        assert main(["fk", "--eps", "0"]) == 1
        assert "eps out of range (0, 1)" in capsys.readouterr().err

    def test_merge_budget_error(self, capsys):
        """Test the congest merge budget rule from flags."""
        assert main(["congest", "--rounds", "2", "--t", "2", "--eps", "0.3"]) == 1
        assert "merge budget rule violated" in capsys.readouterr().err

    def test_unknown_set_key(self, capsys):
        """Test --set with a key the config does not have."""
        assert main(["--set", "colour=blue", "fk"]) == 1
        assert "unknown key 'colour'" in capsys.readouterr().err

    def test_trial_errors_exit_nonzero(self, tmp_path, capsys):
        """Test an errored trial fails the run."""
        missing = tmp_path / "missing.csv"
        assert main(["--trials", "1", "sample", "--generator", "file", "--input", str(missing)]) == 1
        assert json.loads(capsys.readouterr().out)["errors"] == 1

    def test_dist_flag(self, tmp_path, capsys):
        """Test --dist picks the sampler's input distribution."""
        args = build_parser().parse_args(["sample", "--dist", "random"])
        assert _overrides(args)["generator"] == "random-uniform"
        missing = tmp_path / "missing.csv"
        assert main(["--trials", "1", "sample", "--dist", "file", "--input", str(missing)]) == 1
        assert json.loads(capsys.readouterr().out)["errors"] == 1

    def test_sample_const_flag(self):
        """Test --sample-const reaches the protocol configuration."""
        for command in ("fsum", "fk", "hoc"):
            args = build_parser().parse_args([command, "--sample-const", "0.5"])
            assert _overrides(args)["sample_const"] == "0.5"
        cfg = validate_config("", _overrides(build_parser().parse_args(["fk", "--sample-const", "0.5"])))
        assert cfg.sample_const == 0.5
        assert ExperimentRunner(cfg).protocol_config.sample_const == 0.5

    def test_delta_budget_flag(self, capsys):
        """Test --delta-budget sets the per-merge delta of propagated sketches."""
        flags = ["congest", "--graph", "path", "--graph-size", "3", "--rows", "10", "--d", "2",
                 "--rounds", "1", "--eps", "0.3"]
        cfg = validate_config("", _overrides(build_parser().parse_args(flags + ["--delta-budget", "0.05"])))
        assert cfg.delta_budget == 0.05
        _, result = ExperimentRunner(cfg).propagate(0)
        assert all(sk.params.delta == 0.05 for sk in result.sketches.values())
        auto = validate_config("", _overrides(build_parser().parse_args(flags + ["--delta-budget", "auto"])))
        assert auto.delta_budget is None
        assert main(flags + ["--delta-budget", "2"]) == 1
        assert "delta_budget out of range" in capsys.readouterr().err

    def test_congest_artifacts(self, tmp_path, capsys):
        """Test the communication report and embeddings of the first trial."""
        comm = tmp_path / "comm.csv"
        emb = tmp_path / "emb"
        args = ["--trials", "1", "congest", "--graph", "path", "--graph-size", "3", "--rows", "10",
                "--d", "2", "--rounds", "1", "--eps", "0.3", "--comm-csv", str(comm),
                "--embeddings-dir", str(emb)]
        assert main(args) == 0
        assert list(pd.read_csv(comm).columns) == ["node", "round", "rows_sent", "words"]
        assert len(list(emb.glob("embedding_*.csv"))) == 3

    def test_sweep_command(self, capsys):
        """Test the sweep subcommand."""
        args = ["--trials", "1", "sweep", "--protocol", "fk", "--field", "s", "--values", "2,4",
                "--n", "64", "--k", "2", "--eps", "0.25"]
        assert main(args) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["values"] == [2, 4]
        assert len(summary["words_ratios"]) == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
