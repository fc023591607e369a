"""End-to-end tests for the command-line interface."""

import json

import pytest

from mmspec.cli import build_parser, main
from mmspec.harness import demo_dataset_path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A trained model pair plus a ready-to-run config file."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["train", "--out", str(root / "models")]) == 0
    cfg = {
        "target_model": "models/target.json",
        "draft_model": "models/draft.json",
        "dataset": str(demo_dataset_path()),
        "template": "plain",
    }
    (root / "config.json").write_text(json.dumps(cfg), encoding="utf-8")
    return root


class TestTrain:
    def test_writes_model_pair(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path / "m")]) == 0
        assert (tmp_path / "m" / "target.json").exists()
        assert (tmp_path / "m" / "draft.json").exists()
        assert "wrote" in capsys.readouterr().out

    def test_missing_corpus_is_a_clean_error(self, tmp_path, capsys):
        rc = main(["train", "--corpus", str(tmp_path / "nope.txt"), "--out", str(tmp_path)])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")


class TestRun:
    def test_full_sweep(self, workspace, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["run", "--config", str(workspace / "config.json"), "--out", str(out)])
        assert rc == 0
        assert (out / "report.csv").exists()
        assert (out / "report.json").exists()
        stdout = capsys.readouterr().out
        assert "wrote" in stdout
        assert "gamma=3" in stdout and "gamma=5" in stdout
        assert "mean_tau=" in stdout

    def test_gamma_flag_restricts_sweep(self, workspace, tmp_path):
        out = tmp_path / "out"
        rc = main(
            ["run", "--config", str(workspace / "config.json"), "--out", str(out), "--gamma", "3"]
        )
        assert rc == 0
        payload = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert [entry["gamma"] for entry in payload["per_gamma"]] == [3]
        assert payload["config"]["gammas"] == [3]

    def test_seed_flag_overrides_config(self, workspace, tmp_path):
        out = tmp_path / "out"
        rc = main(
            ["run", "--config", str(workspace / "config.json"), "--out", str(out), "--seed", "7"]
        )
        assert rc == 0
        payload = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert payload["config"]["seed"] == 7

    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_unknown_config_key(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        obj = json.loads((workspace / "config.json").read_text(encoding="utf-8"))
        obj["order"] = 3
        bad.write_text(json.dumps(obj), encoding="utf-8")
        rc = main(["run", "--config", str(bad), "--out", str(tmp_path / "out")])
        assert rc == 1
        assert "unknown config fields" in capsys.readouterr().err

    def test_matches_harness_csv(self, workspace, tmp_path):
        """The CLI is a thin shell over run_experiment: same bytes out."""
        from mmspec.harness import ExperimentConfig, run_experiment

        main(["run", "--config", str(workspace / "config.json"), "--out", str(tmp_path / "a")])
        cfg = ExperimentConfig.from_file(workspace / "config.json")
        run_experiment(cfg, tmp_path / "b")
        assert (tmp_path / "a" / "report.csv").read_bytes() == (
            tmp_path / "b" / "report.csv"
        ).read_bytes()


class TestTrace:
    def test_prints_annotated_generation(self, workspace, capsys):
        rc = main(["trace", "--config", str(workspace / "config.json"), "--prompt-id", "p00"])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "prompt p00" in stdout
        assert "legend:" in stdout

    def test_gamma_flag(self, workspace, capsys):
        rc = main(
            [
                "trace",
                "--config", str(workspace / "config.json"),
                "--prompt-id", "p01",
                "--gamma", "5",
            ]
        )
        assert rc == 0
        assert "gamma=5" in capsys.readouterr().out

    def test_unknown_prompt_id(self, workspace, capsys):
        rc = main(["trace", "--config", str(workspace / "config.json"), "--prompt-id", "p99"])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")


class TestParser:
    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_prog_name(self):
        assert build_parser().prog == "mmspec"
