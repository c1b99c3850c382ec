import json
import subprocess
import sys

import pytest

from qss.cli import analyze_rows, build_parser, build_config, main
from qss.config import SessionConfig
from qss.net.runner import run_processes
from qss.session import load_report, simulate_session


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def default_report(tmp_path_factory):
    path = tmp_path_factory.mktemp("r") / "default.json"
    assert run_cli("simulate", "--seed", 1, "--output", path) == 0
    return path


class TestSimulate:
    def test_defaults(self, default_report, capsys):
        body = load_report(default_report)
        assert body["config"]["rounds"] == 100_000
        kept = [r for r in body["table"] if r["kept"]]
        assert len(kept) == 4
        assert all(abs(r["abs_eps"] - 0.893) < 0.015 for r in kept)

    def test_ideal(self, tmp_path, capsys):
        path = tmp_path / "ideal.json"
        assert run_cli("simulate", "--rounds", 100_000, "--visibility", 1, "--output", path) == 0
        out = capsys.readouterr().out
        assert "(phi,C,C)" in out and "status: OK" in out
        body = load_report(path)
        for r in body["table"]:
            if r["kept"]:
                assert r["eps"] == r["ideal_eps"] and r["qber"] == 0.0

    def test_intercept_resend(self, tmp_path):
        path = tmp_path / "ir.json"
        assert run_cli("simulate", "--rounds", 20_000, "--adversary", "intercept_resend_a", "--output", path) == 2
        assert load_report(path)["estimation"]["abort"] is True

    def test_config_file_overrides_flags(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"rounds": 777, "seed": 5}))
        args = build_parser().parse_args(["simulate", "--rounds", "10", "--visibility", "0.9", "--config", str(cfg)])
        c = build_config(args)
        assert c.rounds == 777 and c.seed == 5 and c.visibility == 0.9

    def test_config_error_has_line(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{\n  "rounds": 5,\n  "seed": ,\n}')
        assert run_cli("simulate", "--config", cfg) == 5
        assert "line 3" in capsys.readouterr().err

    def test_invalid_value(self, capsys):
        assert run_cli("simulate", "--rounds", 0) == 5


class TestAnalyze:
    def test_realistic_deltas(self, default_report, capsys):
        assert run_cli("analyze", default_report) == 0
        body = load_report(default_report)
        assert all(r["delta_published"] < 0.02 for r in analyze_rows(body))
        assert "(varphi,C,D)" in capsys.readouterr().out

    def test_ideal_deltas(self):
        body = simulate_session(SessionConfig(rounds=50_000, seed=2, visibility=1.0)).report
        for r in analyze_rows(body):
            assert r["delta_ideal"] == 0.0
            assert r["delta_published"] == pytest.approx(0.10, abs=0.02)

    def test_empty_report(self, tmp_path, capsys):
        path = tmp_path / "empty.json"
        path.write_text("")
        assert run_cli("analyze", path) == 5
        assert "schema error" in capsys.readouterr().err

    def test_unknown_major_version(self, tmp_path, default_report):
        doc = json.loads(default_report.read_text())
        doc["body"]["schema_version"] = "9.0"
        path = tmp_path / "v9.json"
        path.write_text(json.dumps(doc))
        assert run_cli("analyze", path) == 5


class TestParty:
    def test_missing_peer(self):
        code = run_cli("party", "--role", "bob", "--rounds", 100, "--timeout", 0.5,
                       "--connect", "channel=127.0.0.1:1", "--connect", "sara=127.0.0.1:1",
                       "--connect", "alice=127.0.0.1:1")
        assert code == 3

    def test_bad_connect_syntax(self):
        assert run_cli("party", "--role", "bob", "--connect", "nowhere") == 5

    def test_processes_early_reveal(self):
        out = run_processes(SessionConfig(rounds=10_000, seed=3, fault="early_reveal", timeout=10))
        for role, code in out["exit_codes"].items():
            if role.value != "channel":
                assert code == 4, out["stderr"][role]

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "qss", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "simulate" in proc.stdout
