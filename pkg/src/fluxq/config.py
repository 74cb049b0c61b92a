"""Run configuration: a single JSON document in natural units (hbar = 1).

Example (rate mode)::

    {
      "mode": "rate",
      "seed": 0,
      "grid": {"M": 1, "l": 8, "dx": 0.14, "mass": 1.0},
      "potential": {"kind": "eckart", "height": 0.5, "width": 1.0, "wall": 5.0},
      "initial_state": {"kind": "potential_envelope", "gamma": 0.4, "tilt": 0.8},
      "surface": {"degree": 0},
      "pointer": {"K": 10, "t_units": 1, "x0": 0},
      "sampling": {"shots": 10000, "sign_shots": 87000, "energy_shots": 64},
      "thermal": {"beta": 1.0, "eps_b": 1e-8, "t_max": 6.5,
                  "t_grid": {"start": 0.0, "stop": 6.5, "num": 100}}
    }

``grid.dt`` may be omitted; when given it must satisfy the chirp resonance
``2 pi dt / (m dx**2) = 2**l`` to 1e-9 relative.  ``thermal`` accepts
``beta`` or ``temperature``.  ``t_grid`` is either a list of times or a
``{start, stop, num}`` mapping.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .propagator import POTENTIAL_KINDS
from .qreg import MAX_QUBITS, consistent_dt

MODES = ("propagate", "spectrum", "rate", "validate")
INITIAL_KINDS = ("potential_envelope", "gaussian", "uniform", "tabulated")

DEFAULTS = {
    "seed": 0,
    "grid": {"M": 1, "mass": 1.0},
    "potential": {"kind": "free"},
    "initial_state": {"kind": "potential_envelope", "gamma": 0.4, "tilt": 0.8},
    "surface": {"degree": 0, "threshold": None},
    "pointer": {"K": 10, "t_units": 1, "x0": 0},
    "sampling": {"shots": 10000, "sign_shots": 87000, "energy_shots": 64, "rounds": 2,
                 "relevance": 5e-3, "min_setting_shots": 100, "min_bin_shots": 5,
                 "encoding": "gray", "bootstrap": 200,
                 "resamples": 64},
    "thermal": {"eps_b": 1e-8, "plateau_bound": 0.05},
    "propagate": {"n_steps": 100, "snapshot_every": 10},
    "output": {"dir": "fluxq-out"},
}

# fields each mode cannot run without
REQUIRED = {
    "propagate": ("grid", "potential", "initial_state"),
    "spectrum": ("grid", "potential", "initial_state", "pointer", "sampling"),
    "rate": ("grid", "potential", "initial_state", "pointer", "sampling", "surface", "thermal"),
    "validate": ("grid", "potential"),
}


@dataclass
class RunConfig:
    """Validated configuration plus derived quantities.

    Attributes
    ----------
    raw : dict
        The configuration with defaults filled in.
    derived : dict
        ``nu``, ``N``, ``dt``, pointer bins and energy band echoed back.
    """

    raw: dict
    derived: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.raw["mode"]

    def __getitem__(self, key):
        return self.raw[key]

    def to_dict(self) -> dict:
        return {"config": self.raw, "derived": self.derived}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    """Read a JSON config file; malformed JSON raises :class:`ConfigurationError`."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {p}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    return data


def _num(d, key, errors, where, positive=False, integer=False, minimum=None):
    v = d.get(key)
    if v is None:
        errors.append(f"{where}.{key} is required")
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        errors.append(f"{where}.{key} must be a finite number, got {v!r}")
        return None
    if integer and int(v) != v:
        errors.append(f"{where}.{key} must be an integer, got {v!r}")
        return None
    if positive and not v > 0:
        errors.append(f"{where}.{key} must be positive, got {v!r}")
        return None
    if minimum is not None and v < minimum:
        errors.append(f"{where}.{key} must be >= {minimum}, got {v!r}")
        return None
    return int(v) if integer else float(v)


def _t_grid(spec, errors):
    if spec is None:
        return None
    if isinstance(spec, dict):
        try:
            t = np.linspace(float(spec.get("start", 0.0)), float(spec["stop"]), int(spec.get("num", 100)))
        except (KeyError, TypeError, ValueError):
            errors.append("thermal.t_grid mapping needs numeric stop (and optional start, num)")
            return None
    else:
        try:
            t = np.asarray(spec, dtype=float).ravel()
        except (TypeError, ValueError):
            errors.append("thermal.t_grid must be a list of numbers or {start, stop, num}")
            return None
    if t.size == 0 or not np.all(np.isfinite(t)):
        errors.append("thermal.t_grid must be non-empty and finite")
        return None
    return t


def validate_config(config: dict, mode: str | None = None) -> RunConfig:
    """Normalize a config and compute derived quantities.

    Every problem found is collected; a single :class:`ConfigurationError`
    lists them all (``exc.errors``).

    Parameters
    ----------
    config : dict
    mode : str, optional
        Overrides ``config["mode"]`` (the CLI passes its positional mode).
    """
    errors: list[str] = []
    if not isinstance(config, dict):
        raise ConfigurationError("config must be a mapping")
    cfg = _merge(DEFAULTS, config)
    if mode is not None:
        cfg["mode"] = mode
    m = cfg.get("mode")
    if m not in MODES:
        errors.append(f"mode must be one of {MODES}, got {m!r}")
        m = None
    for key in REQUIRED.get(m, ()):
        if key not in config and key not in DEFAULTS:
            errors.append(f"{key} section is required in {m} mode")
    derived: dict = {}

    seed = cfg.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"seed must be a non-negative integer, got {seed!r}")

    # grid
    g = cfg.get("grid") or {}
    M = _num(g, "M", errors, "grid", integer=True, minimum=1)
    l = _num(g, "l", errors, "grid", integer=True, minimum=1)
    dx = _num(g, "dx", errors, "grid", positive=True)
    mass = _num(g, "mass", errors, "grid", positive=True)
    if None not in (M, l, dx, mass):
        nu = M * l
        dt_ok = consistent_dt(dx, mass, l)
        if g.get("dt") is None:
            g["dt"] = dt_ok
        else:
            dt = _num(g, "dt", errors, "grid", positive=True)
            if dt is not None and abs(dt - dt_ok) > 1e-9 * dt_ok:
                errors.append(
                    f"grid.dt = {dt!r} violates the resonance m*dx**2/dt = 2*pi/2**l "
                    f"(relative mismatch {abs(dt / dt_ok - 1):.3g}); suggested dt = {dt_ok!r}")
            elif dt is not None:
                g["dt"] = dt_ok
        if nu > MAX_QUBITS:
            errors.append(f"register of nu = M*l = {nu} qubits exceeds the cap {MAX_QUBITS}")
        derived.update(nu=nu, N=2 ** nu, points_per_dof=2 ** l, dt=g["dt"],
                       length=2 ** l * dx, branch_width=2 * math.pi / g["dt"])

    # potential
    p = cfg.get("potential") or {}
    kind = p.get("kind")
    if kind not in POTENTIAL_KINDS:
        errors.append(f"potential.kind must be one of {POTENTIAL_KINDS}, got {kind!r}")
    else:
        need = {"harmonic": ("omega",), "eckart": ("height", "width"),
                "double_well": ("a", "b"), "tabulated": ("values",)}.get(kind, ())
        for k in need:
            if p.get(k) is None:
                errors.append(f"potential.{k} is required for kind {kind}")
        if kind == "eckart" and p.get("width") is not None:
            _num(p, "width", errors, "potential", positive=True)
        if kind == "tabulated" and p.get("values") is not None and "N" in derived:
            if len(np.ravel(p["values"])) != derived["N"]:
                errors.append(f"potential.values needs N = {derived['N']} entries")

    # initial state
    s = cfg.get("initial_state") or {}
    if s.get("kind") not in INITIAL_KINDS:
        errors.append(f"initial_state.kind must be one of {INITIAL_KINDS}, got {s.get('kind')!r}")
    elif s["kind"] == "tabulated":
        if "N" in derived and len(np.ravel(s.get("amplitudes", []))) != derived["N"]:
            errors.append(f"initial_state.amplitudes needs N = {derived.get('N')} entries")

    if m in ("spectrum", "rate"):
        pt = cfg["pointer"]
        K = _num(pt, "K", errors, "pointer", integer=True, minimum=1)
        tu = _num(pt, "t_units", errors, "pointer", integer=True, minimum=0)
        x0 = _num(pt, "x0", errors, "pointer", integer=True, minimum=0)
        if K is not None and x0 is not None and x0 >= 2 ** K:
            errors.append(f"pointer.x0 must be < 2**K = {2 ** K}")
        if K is not None and "nu" in derived and derived["nu"] + K > MAX_QUBITS:
            errors.append(f"nu + K = {derived['nu'] + K} exceeds the qubit cap {MAX_QUBITS}")
        if K is not None and tu and "dt" in derived:
            derived.update(pointer_bins=2 ** K,
                           energy_band=[0.0, 2 * math.pi / (derived["dt"] * tu)],
                           energy_resolution=2 * math.pi / (2 ** K * derived["dt"] * tu))
        sm = cfg["sampling"]
        _num(sm, "shots", errors, "sampling", integer=True, minimum=1)
        if m == "rate":
            _num(sm, "sign_shots", errors, "sampling", integer=True, minimum=0)
            _num(sm, "energy_shots", errors, "sampling", integer=True, minimum=0)
            _num(sm, "rounds", errors, "sampling", integer=True, minimum=0)
            _num(sm, "resamples", errors, "sampling", integer=True, minimum=0)
            _num(sm, "bootstrap", errors, "sampling", integer=True, minimum=0)
            if sm.get("encoding") not in ("gray", "binary"):
                errors.append("sampling.encoding must be 'gray' or 'binary'")

    if m == "rate":
        th = cfg["thermal"]
        if th.get("beta") is None and th.get("temperature") is None:
            errors.append("thermal.beta (or thermal.temperature) is required in rate mode")
        elif th.get("beta") is not None:
            _num(th, "beta", errors, "thermal", positive=True)
        else:
            T = _num(th, "temperature", errors, "thermal", positive=True)
            if T is not None:
                th["beta"] = 1.0 / T
        _num(th, "t_max", errors, "thermal", positive=True)
        _num(th, "eps_b", errors, "thermal", positive=True)
        t = _t_grid(th.get("t_grid"), errors)
        if t is not None:
            th["t_grid"] = t.tolist()
        sf = cfg["surface"]
        d = sf.get("degree", 0)
        if M is not None and not (isinstance(d, int) and 0 <= d < M):
            errors.append(f"surface.degree must be in [0, {M}), got {d!r}")

    if m == "propagate":
        pr = cfg["propagate"]
        _num(pr, "n_steps", errors, "propagate", integer=True, minimum=0)
        _num(pr, "snapshot_every", errors, "propagate", integer=True, minimum=1)

    if errors:
        raise ConfigurationError(f"{len(errors)} configuration error(s): " + "; ".join(errors),
                                 errors=errors)
    return RunConfig(cfg, derived)
