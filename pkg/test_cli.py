#!/usr/bin/env python3
"""
命令行测试
子命令输出、退出码、校验错误行号、种子优先级与运行参数读取
"""

import io
import json

import pytest

from core.cli import EXIT_IO, EXIT_NASH, EXIT_OK, EXIT_VALIDATION, resolve_seed, run
from core.exceptions import ConfigurationError
from core.settings import Settings, SimulationSettings, load_settings

MISSING_GAMMA = """{
  "market": {
    "horizon": 1.0,
    "r": 0.03,
    "mu": [0.08, 0.08],
    "sigma": [0.25, 0.25]
  },
  "agents": [
    {"theta": 0.5, "gamma": 2.0, "x0": 1.0},
    {"theta": 0.5, "x0": 1.5}
  ]
}
"""


def _run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_classify_baseline():
    code, out, err = _run("classify", "-c", "baseline", "--steps", "6")
    assert code == EXIT_OK
    assert "Unique" in err
    data = json.loads(out)
    assert data["classification"] == "Unique"
    assert data["provenance"]["steps"] == 6
    assert len(data["profiles"]) == 1


def test_classify_marginal_preset_reports_witness():
    code, out, err = _run("classify", "-c", "marginal", "--steps", "6")
    assert code == EXIT_OK
    assert "None" in err
    assert "xi_nonzero" in err
    assert json.loads(out)["profiles"] == []


def test_missing_field_reports_line(tmp_path):
    game = tmp_path / "game.json"
    game.write_text(MISSING_GAMMA, encoding="utf-8")
    code, out, err = _run("classify", "-c", str(game))
    assert code == EXIT_VALIDATION
    assert "agents[1]" in err
    assert "第 10 行" in err
    assert out == ""


def test_bad_arguments_and_missing_file(tmp_path):
    code, _, err = _run("classify", "-c", "baseline", "--mode", "trinomial")
    assert code == EXIT_VALIDATION
    assert "命令行参数错误" in err
    code, _, _ = _run("classify", "-c", str(tmp_path / "absent.json"))
    assert code == EXIT_IO


def test_classify_then_verify(tmp_path):
    report = tmp_path / "report.json"
    code, out, _ = _run("classify", "-c", "baseline", "--steps", "6", "--out", str(report))
    assert code == EXIT_OK
    assert "Unique" in out

    code, out, err = _run("verify", "-c", "baseline", "--steps", "6", "--profile", str(report))
    assert code == EXIT_OK, err
    data = json.loads(out)
    assert data["passed"]
    assert data["label"] == "sampled certificate"


def test_verify_rejects_perturbed_profile(tmp_path):
    report = tmp_path / "report.json"
    assert _run("classify", "-c", "baseline", "--steps", "6", "--out", str(report))[0] == EXIT_OK
    data = json.loads(report.read_text(encoding="utf-8"))
    profile = data["profiles"][0]
    profile["amounts"] = [[[1.5 * row[0], row[1]] for row in level] for level in profile["amounts"]]
    perturbed = tmp_path / "perturbed.json"
    perturbed.write_text(json.dumps(profile), encoding="utf-8")

    code, _, err = _run("verify", "-c", "baseline", "--steps", "6", "--profile", str(perturbed))
    assert code == EXIT_NASH
    assert "参与者 1" in err


def test_frontier_columnar():
    code, out, _ = _run("frontier", "-c", "baseline", "--steps", "6", "--agent", "1",
                        "--d-grid", "0.2:0.6:5", "--format", "columnar")
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert lines[0] == "d,variance"
    assert len(lines) == 6


def test_solve_agent_reports_lagrange_multiplier():
    code, out, err = _run("solve-agent", "-c", "baseline", "--steps", "6", "--agent", "2")
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["agent"]["agent"] == 2
    assert "λ*=" in err


def test_simulate_independent_of_workers():
    common = ("simulate", "-c", "baseline", "--steps", "6", "--scheme", "euler_mc",
              "--paths", "5000", "--seed", "3")
    code1, out1, _ = _run(*common, "--workers", "1")
    code8, out8, _ = _run(*common, "--workers", "8")
    assert code1 == code8 == EXIT_OK
    assert out1 == out8
    assert json.loads(out1)["provenance"]["seed"] == 3


# ---------------------------------------------------------------- 运行参数

def test_seed_precedence(monkeypatch):
    settings = Settings(simulation=SimulationSettings(seed=99))
    monkeypatch.setenv("MVNASH_SEED", "11")
    assert resolve_seed(5, settings) == 5
    assert resolve_seed(None, settings) == 11
    monkeypatch.delenv("MVNASH_SEED")
    assert resolve_seed(None, settings) == 99
    monkeypatch.setenv("MVNASH_SEED", "abc")
    with pytest.raises(ConfigurationError):
        resolve_seed(None, settings)


def test_load_settings_defaults_and_overrides(tmp_path):
    defaults = load_settings(str(tmp_path / "missing.json"))
    assert defaults.solver.picard_tol == 1e-10
    assert defaults.simulation.scheme == "tree_exact"
    assert defaults.cli["seed_env"] == "MVNASH_SEED"
    assert "baseline" in defaults.presets

    custom = tmp_path / "config.json"
    custom.write_text(json.dumps({"simulation": {"paths": 10}, "solver": {"zero_rel_threshold": 1e-6}}),
                      encoding="utf-8")
    settings = load_settings(str(custom))
    assert settings.simulation.paths == 10
    assert settings.simulation.seed == 20240601
    assert settings.solver.zero_rel_threshold == 1e-6
    assert settings.solver.singular_rel_threshold == 1e-8


NO_DRIVER = """{
  "market": {"horizon": 1.0, "r": 0.03, "mu": [0.08, 0.08], "sigma": [0.25, 0.25]},
  "agents": [
    {"theta": 0.5, "gamma": 2.0, "x0": 1.0},
    {"theta": 0.5, "gamma": 3.0, "x0": 1.5}
  ]
}
"""


def test_driver_defaults_come_from_settings(tmp_path):
    game = tmp_path / "game.json"
    game.write_text(NO_DRIVER, encoding="utf-8")
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"cli": {"steps": 3, "mode": "fullbinary"}}), encoding="utf-8")

    code, out, _ = _run("classify", "-c", str(game), "--settings", str(config))
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["provenance"]["steps"] == 3
    assert data["provenance"]["mode"] == "fullbinary"

    code, out, _ = _run("classify", "-c", str(game), "--settings", str(config), "--steps", "5")
    assert code == EXIT_OK
    assert json.loads(out)["provenance"]["steps"] == 5


NODE_RATE = """{
  "market": {
    "horizon": 1.0,
    "r": {"kind": "node", "table": [[0.02], [0.02, 0.03], [0.02, 0.025, 0.03]]},
    "mu": [0.07, 0.10],
    "sigma": [0.20, 0.30]
  },
  "agents": [
    {"theta": 0.5, "gamma": 2.0, "x0": 1.0},
    {"theta": 0.3, "gamma": 4.0, "x0": 2.0}
  ],
  "driver": {"steps": 4, "mode": "recombining"}
}
"""


def test_node_dependent_rate_on_recombining_driver(tmp_path):
    game = tmp_path / "game.json"
    game.write_text(NODE_RATE, encoding="utf-8")
    code, out, err = _run("classify", "-c", str(game))
    assert code == EXIT_OK, err
    data = json.loads(out)
    assert data["classification"] == "Unique"
    assert data["provenance"]["mode"] == "fullbinary"

    code, _, err = _run("solve-agent", "-c", str(game), "--agent", "1")
    assert code == EXIT_OK, err
