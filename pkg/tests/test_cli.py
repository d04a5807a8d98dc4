# tests/test_cli.py

import json
import os

import pytest
from click.testing import CliRunner

from app import cli

@pytest.fixture
def runner():
    return CliRunner()

def write_config(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf8")
    return str(path)

def csv_body(text):
    """Drops the '# key: value' metadata block."""
    return [line for line in text.splitlines() if not line.startswith("#")]

def test_help_lists_commands(runner):
    """Every subcommand is registered."""
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == 0
    for name in ("calibrate", "risk", "sweep", "equiv", "noneq"):
        assert name in result.output

def test_missing_field_exits_2(runner, tmp_path):
    """Schema violations exit with the validation code and name the field."""
    path = write_config(tmp_path, "risk.json", {
        "command": "risk",
        "protocol": {"model": "gaussian", "constraint": "none", "randomness": "local", "m": 2, "n": 4, "d": 4},
    })
    result = runner.invoke(cli, ["risk", "--config", path])
    assert result.exit_code == 2
    assert "panel: missing required field" in result.stderr
    assert result.stdout == ""

def test_missing_config_file_exits_2(runner, tmp_path):
    """A config path that does not exist is a validation failure."""
    result = runner.invoke(cli, ["sweep", "--config", str(tmp_path / "none.json")])
    assert result.exit_code == 2

def test_synthetic_sweep_to_stdout(runner, configs_dir):
    """Without --out the CSV goes to stdout and the report to stderr."""
    path = os.path.join(configs_dir, "sweep_synthetic.json")
    result = runner.invoke(cli, ["sweep", "--config", path])
    assert result.exit_code == 0
    assert result.stdout.startswith("# schema_version:")
    header, *rows = csv_body(result.stdout)
    assert header.split(",")[-4:] == ["metric", "value", "mc_stderr", "wall_time"]
    exponent = [r for r in rows if ",exponent," in r]
    assert len(exponent) == 1
    assert float(exponent[0].split(",exponent,")[1].split(",")[0]) == pytest.approx(-1.0)
    assert "Sweep over m" in result.stderr

def test_equiv_measures(runner, configs_dir):
    """The measures preset reports TV, its dual, Hellinger and the kernel check."""
    path = os.path.join(configs_dir, "equiv_measures.json")
    result = runner.invoke(cli, ["equiv", "--config", path])
    assert result.exit_code == 0
    metrics = [r.split(",")[-4] for r in csv_body(result.stdout)[1:]]
    assert metrics == ["tv", "tv_dual", "hellinger", "tv_after_kernel"]

def test_equiv_malformed_measure_exits_2(runner, tmp_path):
    """Weights that do not sum to one are rejected with the measure's path."""
    path = write_config(tmp_path, "m.json", {
        "command": "equiv",
        "preset": "measures",
        "measures": {
            "P": {"support": [0, 1], "weights": [0.5, 0.6]},
            "Q": {"support": [0, 1], "weights": [0.5, 0.5]},
        },
    })
    result = runner.invoke(cli, ["equiv", "--config", path])
    assert result.exit_code == 2
    assert "measures.P" in result.stderr

def test_equiv_transfer_holds(runner, configs_dir):
    """The bundled transfer instance satisfies the bound."""
    path = os.path.join(configs_dir, "equiv_transfer.json")
    result = runner.invoke(cli, ["equiv", "--config", path])
    assert result.exit_code == 0
    rows = {r.split(",")[-4]: r.split(",")[-3] for r in csv_body(result.stdout)[1:]}
    assert rows["holds"] == "true"
    assert rows["composed_dp_holds"] == "true"

def test_noneq_outside_regime_exits_3(runner, tmp_path):
    """m b > d is refused with the regime exit code before any simulation."""
    path = write_config(tmp_path, "noneq.json", {"command": "noneq", "d": 64, "n": 8, "m": 4})
    result = runner.invoke(cli, ["noneq", "--config", path])
    assert result.exit_code == 3
    assert "RegimeError" not in result.stdout

def test_out_file_identical_across_jobs(runner, tmp_path):
    """Same config and seed give byte-identical files whatever --jobs is."""
    path = write_config(tmp_path, "cal.json", {
        "command": "calibrate",
        "protocol": {"model": "gaussian", "constraint": "none", "randomness": "local", "m": 2, "n": 4, "d": 4},
        "alpha": 0.1,
        "reps": 1000,
        "eval_reps": 200,
    })
    outputs = []
    for jobs in ("1", "2"):
        out = tmp_path / f"out_{jobs}.csv"
        result = runner.invoke(cli, ["calibrate", "--config", path, "--out", str(out),
                                     "--seed", "11", "--jobs", jobs])
        assert result.exit_code == 0
        assert "# seed: 11" in out.read_text(encoding="utf8")
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]

def test_seed_changes_output(runner, tmp_path):
    """Different seeds give different thresholds and hashes."""
    path = write_config(tmp_path, "cal.json", {
        "command": "calibrate",
        "protocol": {"model": "gaussian", "constraint": "none", "randomness": "local", "m": 2, "n": 4, "d": 4},
        "alpha": 0.1,
        "reps": 1000,
    })
    a = runner.invoke(cli, ["calibrate", "--config", path, "--seed", "1"])
    b = runner.invoke(cli, ["calibrate", "--config", path, "--seed", "2"])
    assert a.exit_code == 0 and b.exit_code == 0
    assert a.stdout != b.stdout

def test_zero_separation_panel_exits_2(runner, tmp_path):
    """A rho = 0 panel is rejected at validation."""
    path = write_config(tmp_path, "risk.json", {
        "command": "risk",
        "protocol": {"model": "gaussian", "constraint": "none", "randomness": "local", "m": 2, "n": 4, "d": 4},
        "panel": {"rho": 0.0},
    })
    result = runner.invoke(cli, ["risk", "--config", path])
    assert result.exit_code == 2
    assert "panel.rho" in result.stderr

def test_single_point_sweep_exits_2(runner, tmp_path):
    """A grid with one value cannot be fitted."""
    path = write_config(tmp_path, "sweep.json", {"command": "sweep", "mode": "synthetic", "param": "m", "values": [4]})
    result = runner.invoke(cli, ["sweep", "--config", path])
    assert result.exit_code == 2
    assert "values" in result.stderr
