import json
from pathlib import Path

import pytest

from fluxq import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(tmp_path, mode, config, *extra):
    out = tmp_path / mode
    code = cli.main([mode, "--config", str(config), "--out", str(out), "--workers", "1", *extra])
    return code, out


def write(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_validate_harmonic_passes(tmp_path):
    code, out = run(tmp_path, "validate", CONFIGS / "harmonic_nu6.json")
    assert code == 0
    rep = json.loads((out / "validation.json").read_text())
    assert rep["passed"] and len(rep["checks"]) >= 8
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) == {"validation.json"}
    assert man["config"]["derived"]["nu"] == 6
    assert {"numpy", "scipy", "fluxq"} <= set(man["versions"])


def test_propagate_outputs(tmp_path):
    code, out = run(tmp_path, "propagate", CONFIGS / "harmonic_nu6.json")
    assert code == 0
    lines = (out / "density.csv").read_text().splitlines()
    assert lines[0] == "step,t,j,x0,density"
    assert len(lines) == 1 + 64 * 11
    assert json.loads((out / "propagate.json").read_text())["max_norm_drift"] < 1e-9


def test_spectrum_outputs_and_determinism(tmp_path):
    code, out = run(tmp_path, "spectrum", CONFIGS / "harmonic_nu6.json")
    assert code == 0
    assert (out / "histogram.csv").read_text().startswith("bin,phase,energy,weight,shots\n")
    first = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "manifest.json"}
    code, out2 = run(tmp_path / "again", "spectrum", CONFIGS / "harmonic_nu6.json")
    second = {p.name: p.read_bytes() for p in out2.iterdir() if p.name != "manifest.json"}
    assert first == second


def test_seed_flag_changes_histogram(tmp_path):
    _, a = run(tmp_path / "a", "spectrum", CONFIGS / "harmonic_nu6.json", "--seed", "1")
    _, b = run(tmp_path / "b", "spectrum", CONFIGS / "harmonic_nu6.json", "--seed", "2")
    assert (a / "histogram.csv").read_bytes() != (b / "histogram.csv").read_bytes()
    assert json.loads((a / "manifest.json").read_text())["seed"] == 1


def test_config_error_exit_code_and_json(tmp_path, capsys):
    p = write(tmp_path, {"grid": {"l": 6, "dx": 0.4}, "potential": {"kind": "free"},
                         "sampling": {"shots": 0}})
    code, out = run(tmp_path, "spectrum", p)
    assert code == 2
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 2 and any("shots" in e for e in err["errors"])
    assert json.loads(capsys.readouterr().out)["status"] == "error"


def test_resource_cap_exit_code(tmp_path):
    p = write(tmp_path, {"grid": {"l": 13, "dx": 0.1}, "potential": {"kind": "free"}})
    code, out = run(tmp_path, "validate", p)
    assert code == 4
    assert json.loads((out / "error.json").read_text())["error"] == "ResourceCapError"


def test_validation_failure_exit_code(tmp_path, monkeypatch):
    real = cli.validation_checks

    def broken(rc):
        checks = real(rc)
        checks[0]["passed"] = False
        return checks

    monkeypatch.setattr(cli, "validation_checks", broken)
    code, out = run(tmp_path, "validate", CONFIGS / "harmonic_nu6.json")
    assert code == 3


def test_bad_workers_flag(tmp_path):
    code, _ = run(tmp_path, "validate", CONFIGS / "harmonic_nu6.json", "--workers", "0")
    assert code == 2


@pytest.mark.parametrize("name", ["harmonic_nu6.json", "eckart.json", "double_well.json"])
def test_shipped_configs_validate(name):
    from fluxq.config import load_config, validate_config
    raw = load_config(CONFIGS / name)
    for mode in ("propagate", "spectrum", "validate", "rate" if "thermal" in raw else "validate"):
        validate_config(raw, mode=mode)
