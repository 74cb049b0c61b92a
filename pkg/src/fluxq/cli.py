"""Command line entry point: ``fluxq <mode> --config path [--seed n] [--workers k] [--out dir]``.

Exit codes: 0 success, 2 configuration error, 3 validation failure (or any
other detected numerical/invariant failure), 4 resource cap exceeded.
Machine artifacts go to ``--out``; progress goes to standard error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import gates, oracle, pipeline, rate
from .config import MODES, RunConfig, load_config, validate_config
from .errors import ConfigurationError, FluxqError, ResourceCapError
from .pointer import PointerConfig, estimate_spectrum, run_pointer
from .propagator import (PotentialSpec, SplitStepPlan, gaussian_wavepacket, potential_envelope,
                         propagate, split_step)
from .qreg import GridSpec, StateVector, new_register

log = logging.getLogger("fluxq")

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_CAP = 0, 2, 3, 4


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- system setup

def build_grid(rc: RunConfig) -> GridSpec:
    g = rc["grid"]
    return GridSpec(int(g["M"]), int(g["l"]), float(g["dx"]), float(g["dt"]), float(g["mass"]))


def build_plan(rc: RunConfig, grid: GridSpec | None = None) -> SplitStepPlan:
    grid = grid or build_grid(rc)
    p = dict(rc["potential"])
    kind = p.pop("kind")
    allowed = {"omega", "height", "width", "wall", "a", "b", "center", "degree", "values"}
    unknown = set(p) - allowed
    if unknown:
        raise ConfigurationError(f"unknown potential fields: {sorted(unknown)}")
    return SplitStepPlan.build(grid, PotentialSpec(kind, **p))


def build_initial(rc: RunConfig, plan: SplitStepPlan) -> StateVector:
    s = rc["initial_state"]
    grid = plan.grid
    kind = s["kind"]
    if kind == "potential_envelope":
        amp = potential_envelope(grid, plan.V, s.get("gamma", 0.4), s.get("tilt", 0.8),
                                 s.get("degree", 0))
    elif kind == "gaussian":
        amp = gaussian_wavepacket(grid, s.get("center"), s.get("width"), s.get("momentum", 0.0))
    elif kind == "uniform":
        st = gates.uniform_superposition(new_register(grid.nu))
        return StateVector(st.amp)
    else:
        a = s["amplitudes"]
        if isinstance(a, dict):
            amp = np.asarray(a["re"], float) + 1j * np.asarray(a.get("im", np.zeros(len(a["re"]))), float)
        else:
            amp = np.asarray(a, dtype=float).astype(np.complex128)
        n = np.linalg.norm(amp)
        if n == 0:
            raise ConfigurationError("initial_state.amplitudes is the zero vector")
        if abs(n - 1) > 1e-9:
            log.warning("initial amplitudes had norm %.6g; normalized", n)
        amp = amp / n
    return StateVector(amp)


def build_pointer(rc: RunConfig) -> PointerConfig:
    p = rc["pointer"]
    return PointerConfig(int(p["K"]), int(p.get("x0", 0)), int(p.get("t_units", 1)))


def build_surface(rc: RunConfig, grid: GridSpec) -> rate.DividingSurface:
    s = rc["surface"]
    return rate.DividingSurface.from_threshold(grid, int(s.get("degree", 0)), s.get("threshold"))


def sampling_plan(rc: RunConfig) -> pipeline.SamplingPlan:
    s = rc["sampling"]
    return pipeline.SamplingPlan(
        pointer_shots=int(s["shots"]), sign_shots=int(s["sign_shots"]),
        energy_shots=int(s["energy_shots"]), rounds=int(s["rounds"]),
        relevance=float(s["relevance"]), min_setting_shots=int(s["min_setting_shots"]),
        min_bin_shots=int(s["min_bin_shots"]), encoding=s["encoding"],
        resamples=int(s["resamples"]))


# ---------------------------------------------------------------------- modes

def run_propagate(rc: RunConfig, out: Path, seed: int, workers: int) -> tuple[list, dict]:
    plan = build_plan(rc)
    grid = plan.grid
    st = build_initial(rc, plan)
    n_steps = int(rc["propagate"]["n_steps"])
    every = int(rc["propagate"]["snapshot_every"])
    pos = grid.positions()
    rows, norms = [], []

    def snap(step, amp):
        p = np.abs(amp) ** 2
        norms.append((step, float(p.sum())))
        for j in range(grid.n_states):
            rows.append((step, step * grid.dt, j, *pos[j], p[j]))

    snap(0, st.amp)

    def cb(step, state):
        if step % every == 0 or step == n_steps:
            snap(step, state.amp)

    log.info("propagating %d steps on %d points", n_steps, grid.n_states)
    propagate(st, plan, n_steps, callback=cb)
    header = ["step", "t", "j"] + [f"x{d}" for d in range(grid.n_dof)] + ["density"]
    files = [write_csv(out / "density.csv", header, rows)]
    drift = max(abs(n - 1) for _, n in norms)
    summary = dict(n_steps=n_steps, snapshots=len(norms), max_norm_drift=drift,
                   gate_tally=st.tally.__dict__)
    files.append(write_json(out / "propagate.json", summary))
    return files, summary


def _write_spectrum(est, out: Path) -> list:
    return [write_json(out / "spectrum.json", est.to_dict()),
            write_csv(out / "histogram.csv", ["bin", "phase", "energy", "weight", "shots"],
                      est.histogram_rows())]


def run_spectrum(rc: RunConfig, out: Path, seed: int, workers: int) -> tuple[list, dict]:
    plan = build_plan(rc)
    st = build_initial(rc, plan)
    cfg = build_pointer(rc)
    n = int(rc["sampling"]["shots"])
    log.info("phase estimation: K=%d, %d shots", cfg.K, n)
    est = estimate_spectrum(st, plan, cfg, n, seed,
                            min_counts=int(rc["sampling"]["min_bin_shots"]))
    files = _write_spectrum(est, out)
    return files, dict(n_bins=len(est), n_shots=n)


def run_rate(rc: RunConfig, out: Path, seed: int, workers: int) -> tuple[list, dict]:
    plan = build_plan(rc)
    grid = plan.grid
    st = build_initial(rc, plan)
    cfg = build_pointer(rc)
    surface = build_surface(rc, grid)
    th = rc["thermal"]
    beta, t_max = float(th["beta"]), float(th["t_max"])
    t_grid = np.asarray(th["t_grid"]) if th.get("t_grid") is not None else np.linspace(0, t_max, 100)
    budget = sampling_plan(rc)
    log.info("sampled rate pipeline: beta=%g, T_max=%g, budget %d + %d shots", beta, t_max,
             budget.pointer_shots, budget.sign_shots)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", rate.PlateauWarning)
        run = pipeline.run_sampled_rate(
            st, plan, cfg, surface, beta, t_max, budget=budget, seed=seed, t_grid=t_grid,
            eps_b=float(th["eps_b"]), n_boot=int(rc["sampling"].get("bootstrap", 200)),
            plateau_bound=float(th["plateau_bound"]), workers=workers)
    for w in caught:
        log.warning("%s", w.message)
    res = run.result
    body = res.to_dict()
    body["levels"] = [dict(bin=i, energy=run.spectral.energies[n],
                           reactant_weight=run.spectral.reactant_weights[n])
                      for n, i in enumerate(run.levels)]
    if th.get("compare_oracle"):
        o = oracle.direct_correlation_and_rate(plan, surface, beta, t_grid, t_max,
                                               eps_b=float(th["eps_b"]))
        body["oracle"] = dict(k=o.result.k, q_r=o.result.q_r, plateau=o.result.plateau,
                              relative_error=res.k / o.result.k - 1 if o.result.k else None,
                              self_check_deviation=o.max_deviation)
    se = res.cf_stderr if res.cf_stderr is not None else np.zeros_like(res.cf)
    files = _write_spectrum(run.spectrum, out)
    files.append(write_json(out / "rate.json", body))
    files.append(write_csv(out / "cf.csv", ["t", "C_f", "stderr"], zip(res.t, res.cf, se)))
    return files, dict(k=res.k, k_stderr=res.k_stderr, q_r=res.q_r, plateau_ok=res.plateau_ok,
                       shots=run.shots)


def validation_checks(rc: RunConfig) -> list[dict]:
    """Oracle cross-checks on the configured system."""
    plan = build_plan(rc)
    grid = plan.grid
    nu = grid.nu
    checks = []

    def add(name, value, tol, passed=None):
        ok = bool(value <= tol) if passed is None else bool(passed)
        checks.append(dict(name=name, value=float(value), tolerance=float(tol), passed=ok))

    # QFT against the DFT kernel on this register size (and all smaller ones up to 8)
    worst, tally_ok = 0.0, True
    for n in sorted({*range(1, min(nu, 8) + 1), nu}):
        if 2 ** n > oracle.DENSE_CAP:
            continue
        U = gates.circuit_matrix(n, lambda s: gates.qft(s))
        worst = max(worst, float(np.abs(U - oracle.dft_matrix(2 ** n)).max()))
        st = gates.qft(new_register(n))
        tally_ok &= st.tally.n_single == n and st.tally.n_two == n * (n - 1) // 2
    add("qft_matches_dft", worst, 1e-10)
    add("qft_gate_tally", 0.0 if tally_ok else 1.0, 0.0, tally_ok)

    U = oracle.dense_step_unitary(plan)
    add("step_unitarity", float(np.abs(U.conj().T @ U - np.eye(U.shape[0])).max()), 1e-10)
    G = gates.circuit_matrix(nu, lambda s: split_step(s, plan))
    k = int(np.argmax(np.abs(U[:, 0])))
    ph = G[k, 0] / U[k, 0]
    add("split_step_matches_dense", float(np.abs(G - ph * U).max()), 1e-10)

    st = StateVector(potential_envelope(grid, plan.V))
    propagate(st, plan, 1000)
    add("norm_after_1000_steps", abs(st.norm() - 1), 1e-9)

    es = oracle.solve(plan)
    rng = np.random.default_rng(int(rc["seed"]))
    psi = rng.normal(size=grid.n_states) + 1j * rng.normal(size=grid.n_states)
    psi /= np.linalg.norm(psi)
    add("completeness", abs(float(es.populations(psi).sum()) - 1), 1e-10)
    add("closure", oracle.closure_residual(es, psi), 1e-10)

    th = rc.raw.get("thermal") or {}
    beta = th.get("beta") or (1.0 / th["temperature"] if th.get("temperature") else 1.0)
    t_max = float(th.get("t_max", 5.0))
    t_grid = np.linspace(0, t_max, 100)
    try:
        surface = build_surface(rc, grid)
        o = oracle.direct_correlation_and_rate(plan, surface, float(beta), t_grid, t_max,
                                               check_tol=np.inf, eigsys=es)
        add("correlation_eigen_sum_vs_trace", o.max_deviation, 1e-8)
        two = rate.SpectralInput(np.array([0.0, 1.3]), np.array([[0.6, 0.3], [0.3, 0.4]]),
                                 np.array([0.5, 0.5]))
        r = rate.rate_constant(two, 1.0, 4.0, dt_quad=1e-4)
        exact = float(rate.running_integral_exact(two, 1.0, 4.0)[0]) / r.q_r
        add("two_level_running_integral", abs(r.k - exact) / abs(exact), 1e-7)
    except ConfigurationError as exc:
        checks.append(dict(name="correlation_eigen_sum_vs_trace", value=None, tolerance=1e-8,
                           passed=False, error=str(exc)))
    return checks


def run_validate(rc: RunConfig, out: Path, seed: int, workers: int) -> tuple[list, dict]:
    log.info("running oracle cross-checks")
    with warnings.catch_warnings():
        # the plateau is not among the checks
        warnings.simplefilter("ignore", rate.PlateauWarning)
        checks = validation_checks(rc)
    ok = all(c["passed"] for c in checks)
    report = dict(passed=ok, checks=checks)
    files = [write_json(out / "validation.json", report)]
    for c in checks:
        log.info("%-34s %s (%.3g, tol %.3g)", c["name"], "PASS" if c["passed"] else "FAIL",
                 c["value"] if c["value"] is not None else float("nan"), c["tolerance"])
    return files, dict(passed=ok, failed=[c["name"] for c in checks if not c["passed"]])


HANDLERS = {"propagate": run_propagate, "spectrum": run_spectrum, "rate": run_rate,
            "validate": run_validate}


# ------------------------------------------------------------------------ main

def _versions() -> dict:
    import scipy
    import sklearn
    return dict(fluxq=__version__, python=platform.python_version(), numpy=np.__version__,
                scipy=scipy.__version__, scikit_learn=sklearn.__version__)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fluxq", description="Gate-level simulation of a "
                                 "phase-estimation route to thermal rate constants.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--workers", type=int, default=None,
                    help="worker threads (default: available cores)")
    ap.add_argument("--out", default=None, help="output directory (default from config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _fail(out: Path | None, code: int, exc: BaseException) -> int:
    err = dict(status="error", exit_code=code, error=type(exc).__name__, message=str(exc))
    if isinstance(exc, ConfigurationError):
        err["errors"] = exc.errors
    text = json.dumps(err, indent=2, sort_keys=True)
    print(text)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    log.error("%s: %s", type(exc).__name__, exc)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s fluxq %(levelname)s %(message)s", stream=sys.stderr)
    out = Path(args.out) if args.out else None
    t0 = time.perf_counter()
    try:
        raw = load_config(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        rc = validate_config(raw, mode=args.mode)
        out = out or Path(rc["output"]["dir"])
        if args.workers is not None and args.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        workers = args.workers or os.cpu_count() or 1
        out.mkdir(parents=True, exist_ok=True)
        stale = out / "error.json"
        if stale.exists():
            stale.unlink()
        files, summary = HANDLERS[rc.mode](rc, out, int(rc["seed"]), workers)
    except ConfigurationError as exc:
        return _fail(out, EXIT_CONFIG, exc)
    except ResourceCapError as exc:
        return _fail(out, EXIT_CAP, exc)
    except FluxqError as exc:
        return _fail(out, EXIT_VALIDATION, exc)
    manifest = dict(mode=rc.mode, seed=int(rc["seed"]), workers=workers, config=rc.to_dict(),
                    versions=_versions(), started=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                    wall_time_s=time.perf_counter() - t0, summary=summary,
                    outputs={p.name: sha256(p) for p in files})
    write_json(out / "manifest.json", manifest)
    if rc.mode == "validate" and not summary["passed"]:
        log.error("validation failed: %s", ", ".join(summary["failed"]))
        return EXIT_VALIDATION
    log.info("done in %.1f s; artifacts in %s", manifest["wall_time_s"], out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
