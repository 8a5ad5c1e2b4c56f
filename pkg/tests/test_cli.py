import json
from pathlib import Path

import pytest

from delaylq.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_dump_schema(capsys):
    assert main(["--dump-schema"]) == 0
    out = capsys.readouterr().out
    assert "[horizon]" in out and "terminal" in out


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as info:
        main(["validate", "--config", str(CONFIGS / "nodelay.toml"), "--bogus"])
    assert info.value.code == 2


def test_validate_ok(tmp_path):
    code = main(["validate", "--config", str(CONFIGS / "nodelay.toml"), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "assumptions.txt").exists()
    assert (tmp_path / "resolved_config.json").exists()


def test_validate_failure_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    table = json.loads((CONFIGS / "delayed.json").read_text())
    table["weights"]["N"] = {"constant": [[-1.0]]}
    bad.write_text(json.dumps(table))
    assert main(["validate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_malformed_config_exit_code(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text(json.dumps({"dimensions": {"n": 1, "d": 1}}))
    assert main(["validate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_riccati_artifacts(tmp_path):
    code = main(
        ["riccati", "--config", str(CONFIGS / "nodelay.toml"), "--grid-m", "5", "--out", str(tmp_path)]
    )
    assert code == 0
    assert (tmp_path / "sigma.csv").exists()
    assert (tmp_path / "gain.csv").exists()
    assert (tmp_path / "sigma.diagnostics.txt").exists()


def test_aode_artifacts(tmp_path):
    code = main(["aode", "--config", str(CONFIGS / "zero.toml"), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "upsilon.csv").exists()
    assert (tmp_path / "gamma.csv").exists()
    assert "positivity_surrogate=True" in (tmp_path / "aode.diagnostics.txt").read_text()


def test_simulate_binary_round_trip(tmp_path):
    code = main(
        [
            "simulate", "--config", str(CONFIGS / "nodelay.toml"), "--grid-m", "5",
            "--paths", "200", "--seed", "3", "--out", str(tmp_path), "--format", "binary",
        ]
    )
    assert code == 0
    from delaylq import TimeHorizon, build_grid
    from delaylq.stochastic import PathEnsemble

    grid = build_grid(TimeHorizon(0.0, 1.0, 0.25), 5)
    ens = PathEnsemble.read_binary(tmp_path / "lambda.bin", grid)
    assert ens.paths == 200
    assert ens.seed == 3


def test_verify_deterministic_reruns(tmp_path):
    args = [
        "verify", "--config", str(CONFIGS / "nodelay.toml"), "--grid-m", "5",
        "--paths", "1000", "--seed", "7",
    ]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    # byte-identical outputs regardless of the worker hint
    assert main(args + ["--out", str(tmp_path / "r3"), "--workers", "4"]) == 0
    for name in ("verify.criteria.csv", "summary.json"):
        b1 = (tmp_path / "r1" / name).read_bytes()
        assert b1 == (tmp_path / "r2" / name).read_bytes()
        assert b1 == (tmp_path / "r3" / name).read_bytes()


def test_study_plan(tmp_path):
    plan = {
        "plan": {
            "name": "cli-study",
            "paths": 1000,
            "grid_m": 5,
            "grid_levels": [5],
            "i_values": [1, 2],
            "studies": ["riccati-convergence"],
            "spec_source": "flagship",
        }
    }
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(plan))
    assert main(["study", "--config", str(path), "--out", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["passed"]


def test_synthesize_smoke(tmp_path):
    code = main(
        [
            "synthesize", "--config", str(CONFIGS / "nodelay.toml"), "--grid-m", "5",
            "--paths", "500", "--out", str(tmp_path),
        ]
    )
    assert code == 0
    assert (tmp_path / "cost.txt").exists()
    assert (tmp_path / "control_feedback.csv").exists()
