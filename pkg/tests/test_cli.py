import json

import pandas as pd
import pytest

from src.cli.commands import EXIT_CHECK_FAILED, EXIT_CONFIG_ERROR, EXIT_PASS, EXIT_RUNTIME_ERROR, main

FAST = ["--horizon", "0.05", "--dt", "0.001", "--kernel-eps", "0.05", "--quantum", "0.02", "--seed", "3"]


def _graph(configs_dir, name):
    return str(configs_dir / f"{name}.yaml")


class TestValidate:
    def test_bundled_config(self, configs_dir, capsys):
        assert main(["validate", "--graph", _graph(configs_dir, "h_tree")]) == EXIT_PASS
        assert json.loads(capsys.readouterr().out)["ok"] is True

    def test_violations_exit_with_config_error(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text(
            "vertices: [v0]\n"
            "edges:\n"
            "  - {id: e1, endpoints: [v0], length: .inf}\n"
            "  - {id: e2, endpoints: [v0], length: .inf}\n"
            "weights:\n"
            "  v0: {e1: 0.5, e2: 0.2}\n"
        )
        assert main(["validate", "--graph", str(path)]) == EXIT_CONFIG_ERROR
        report = json.loads(capsys.readouterr().out)
        assert [v["rule"] for v in report["violations"]] == ["weight_sum"]

    def test_missing_file(self, tmp_path):
        assert main(["validate", "--graph", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG_ERROR


class TestSimulate:
    def test_writes_outputs(self, configs_dir, tmp_path):
        out = tmp_path / "run"
        assert main(["simulate", "--graph", _graph(configs_dir, "star3"), *FAST, "--out", str(out)]) == EXIT_PASS
        for name in ("path.csv", "clocks.csv", "manifest.json"):
            assert (out / name).exists()
        header = (out / "path.csv").read_text().splitlines()[0]
        assert header == "t,edge_id,coord"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert manifest["parameters"]["n_steps"] == 50

    def test_rerun_is_byte_identical(self, configs_dir, tmp_path):
        for name in ("a", "b"):
            main(["simulate", "--graph", _graph(configs_dir, "h_tree"), *FAST, "--out", str(tmp_path / name)])
        for name in ("path.csv", "clocks.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_dump_edges(self, configs_dir, tmp_path):
        out = tmp_path / "run"
        args = ["simulate", "--graph", _graph(configs_dir, "h_tree"), *FAST, "--out", str(out), "--dump-edges"]
        assert main(args) == EXIT_PASS
        assert (out / "edge_mid.csv").exists()
        assert (out / "ledger_u_mid.csv").exists()
        assert (out / "ledger_w_mid.csv").exists()
        assert (out / "ledger_u_l1.csv").exists()

    def test_start_point(self, configs_dir, tmp_path):
        out = tmp_path / "run"
        args = ["simulate", "--graph", _graph(configs_dir, "star3"), *FAST, "--out", str(out), "--start", "e2:0.3"]
        assert main(args) == EXIT_PASS
        path = pd.read_csv(out / "path.csv")
        assert path.loc[0, "edge_id"] == "e2"
        assert path.loc[0, "coord"] == pytest.approx(0.3)

    def test_bad_start_point(self, configs_dir):
        with pytest.raises(SystemExit):
            main(["simulate", "--graph", _graph(configs_dir, "star3"), "--start", "nocolon"])

    def test_missing_graph(self, tmp_path):
        assert main(["simulate", "--graph", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG_ERROR


class TestExperiments:
    def test_rejected_exit_experiment(self, configs_dir, tmp_path):
        args = [
            "exit-prob", "--graph", _graph(configs_dir, "star3"), *FAST,
            "--horizon", "0.02", "--delta", "0.5", "--paths", "20", "--out", str(tmp_path / "run"),
        ]
        assert main(args) == EXIT_RUNTIME_ERROR

    def test_exit_delta_too_large(self, configs_dir, tmp_path):
        args = ["exit-prob", "--graph", _graph(configs_dir, "path3"), *FAST, "--delta", "2.0", "--out", str(tmp_path)]
        assert main(args) == EXIT_CONFIG_ERROR

    def test_verify_passes(self, configs_dir, tmp_path, capsys):
        out = tmp_path / "run"
        args = ["verify", "--graph", _graph(configs_dir, "star3"), *FAST, "--paths", "2", "--out", str(out)]
        assert main(args) == EXIT_PASS
        assert json.loads(capsys.readouterr().out)["pass"] is True
        assert (out / "report.json").exists()
        assert (out / "report.schema.json").exists()

    def test_negative_control_fails(self, configs_dir, tmp_path, capsys):
        args = [
            "verify", "--graph", _graph(configs_dir, "star3"), *FAST, "--paths", "2",
            "--negative-control", "--out", str(tmp_path / "run"),
        ]
        assert main(args) == EXIT_CHECK_FAILED
        report = json.loads(capsys.readouterr().out)
        assert report["pass"] is False
        assert report["statistics"]["checks"]["budget_conservation"]["pass"] is False
