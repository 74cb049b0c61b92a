import json

import pytest

from fluxq.config import load_config, validate_config
from fluxq.errors import ConfigurationError
from fluxq.qreg import consistent_dt

BASE = {"grid": {"M": 1, "l": 6, "dx": 0.4}, "potential": {"kind": "harmonic", "omega": 1.0}}


def cfg(mode, **extra):
    c = json.loads(json.dumps(BASE))
    c.update(extra)
    c["mode"] = mode
    return c


def test_valid_config_echoes_derived():
    rc = validate_config(cfg("validate"))
    assert rc.derived["nu"] == 6 and rc.derived["N"] == 64
    assert rc["grid"]["dt"] == pytest.approx(consistent_dt(0.4, 1.0, 6))


def test_two_dof_nu():
    c = cfg("validate")
    c["grid"] = {"M": 2, "l": 3, "dx": 0.5}
    assert validate_config(c).derived["nu"] == 6


def test_dt_off_by_one_percent_cites_constraint():
    c = cfg("validate")
    dt = consistent_dt(0.4, 1.0, 6)
    c["grid"]["dt"] = dt * 1.01
    with pytest.raises(ConfigurationError) as exc:
        validate_config(c)
    msg = exc.value.errors[0]
    assert "resonance" in msg and repr(dt) in msg


def test_missing_beta_in_rate_mode():
    c = cfg("rate", thermal={"t_max": 5.0})
    with pytest.raises(ConfigurationError, match="beta"):
        validate_config(c)


def test_temperature_converts_to_beta():
    c = cfg("rate", thermal={"temperature": 0.5, "t_max": 5.0})
    assert validate_config(c)["thermal"]["beta"] == 2.0


def test_zero_shots_rejected():
    with pytest.raises(ConfigurationError, match="shots"):
        validate_config(cfg("spectrum", sampling={"shots": 0}))


def test_errors_are_aggregated():
    c = cfg("rate", thermal={})
    c["grid"]["dx"] = -1
    c["potential"] = {"kind": "morse"}
    with pytest.raises(ConfigurationError) as exc:
        validate_config(c)
    assert len(exc.value.errors) >= 4


@pytest.mark.parametrize("tg,n", [([0, 1, 2], 3), ({"stop": 5.0, "num": 11}, 11)])
def test_t_grid_forms(tg, n):
    c = cfg("rate", thermal={"beta": 1.0, "t_max": 5.0, "t_grid": tg})
    assert len(validate_config(c)["thermal"]["t_grid"]) == n


def test_mode_override_and_unknown_mode():
    assert validate_config(cfg("validate"), mode="propagate").mode == "propagate"
    with pytest.raises(ConfigurationError):
        validate_config(cfg("fly"))


def test_load_config_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{oops")
    with pytest.raises(ConfigurationError, match="not valid JSON"):
        load_config(p)
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json")
    p.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_register_cap_in_config():
    c = cfg("spectrum")
    c["grid"]["l"] = 20
    c["pointer"] = {"K": 10}
    with pytest.raises(ConfigurationError, match="cap"):
        validate_config(c)
