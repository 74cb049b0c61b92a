"""End-to-end sampled estimate of the thermal rate constant.

1. Phase estimation on the initial state gives the pointer histogram and
   its resolved peaks.
2. Each peak is post-selected (with purification rounds); momentum and
   position shots on the collapsed state pick its energy branch.
3. Thermally relevant peaks get the sign protocol, with shots allocated by
   their weight in ``C_f``; the amplitude columns are orthonormalized.
4. Energies and amplitude tables give ``C_f``, ``Q_r`` and ``k``; a
   parametric bootstrap over the estimated energies and amplitudes gives
   their standard errors.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rate as rate_mod
from .amplitudes import EigenstateAmplitudes, estimate_eigenstate_amplitudes, resample_amplitudes
from .errors import ConfigurationError, EmptySpectrumError, NumericError
from .pointer import PointerConfig, SpectrumEstimate, estimate_spectrum, run_pointer
from .propagator import SplitStepPlan
from .qreg import StateVector

log = logging.getLogger(__name__)

STREAM_BOOTSTRAP = 9


@dataclass
class SamplingPlan:
    """Shot budget of a sampled rate run.

    Attributes
    ----------
    pointer_shots : int
        Phase-estimation shots on the initial state.
    sign_shots : int
        Total shots for the sign protocol, shared by the relevant bins.
    energy_shots : int
        Momentum-basis shots per bin for the branch choice.
    rounds : int
        Purification rounds per post-selected collapse.
    relevance : float
        Bins with ``exp(-beta (E - E_min) / 2) < relevance`` skip the sign
        protocol.  The half-Boltzmann factor is the weight a level carries
        in its ``C_f`` pair terms with the ground level.
    min_setting_shots : int
        Floor on shots per setting for a relevant bin.
    min_bin_shots : int
        Pointer counts below which a peak is not post-selected.
    encoding : {"gray", "binary"}
        Register relabelling used by the sign protocol.
    orthogonalize : bool
        Replace the sampled amplitude columns by their symmetric (Loewdin)
        orthonormalization.  Exact eigenvectors are orthonormal, and the
        component of one column's noise along another level feeds straight
        into ``O_nm``; removing it cuts the late-time noise of ``C_f``.
    debias : bool
        Subtract the first-order sampling variance of each overlap from
        ``|O_nm|**2`` (only used without orthogonalization).
    resamples : int
        Replicates of the per-level data bootstrap feeding the standard
        errors; 0 falls back to the Gauss-Newton covariance.
    bias_correct : bool
        Report bootstrap bias-corrected ``C_f``, ``Q_r``, ``k`` and plateau
        values (see :func:`bias_correct`).
    """

    pointer_shots: int = 10_000
    sign_shots: int = 87_000
    energy_shots: int = 64
    rounds: int = 2
    relevance: float = 5e-3
    min_setting_shots: int = 100
    min_bin_shots: int = 5
    encoding: str = "gray"
    orthogonalize: bool = True
    debias: bool = False
    resamples: int = 64
    bias_correct: bool = True

    def __post_init__(self):
        if self.pointer_shots < 1:
            raise ConfigurationError("pointer_shots must be >= 1")
        if self.sign_shots < 0 or self.energy_shots < 0 or self.rounds < 0:
            raise ConfigurationError("shot counts and rounds must be >= 0")


@dataclass
class SampledRun:
    """Everything produced by :func:`run_sampled_rate`."""

    spectrum: SpectrumEstimate
    amplitudes: list
    spectral: rate_mod.SpectralInput
    result: rate_mod.RateResult
    levels: list
    shots: dict
    bootstrap: dict = field(default_factory=dict)

    def amplitude_matrix(self) -> np.ndarray:
        """Real amplitude columns of the levels used."""
        return np.stack([self.amplitudes_by_bin[i].table.values for i in self.levels], axis=1)

    @property
    def amplitudes_by_bin(self) -> dict:
        return {a.bin_index: a for a in self.amplitudes}


def allocate_setting_shots(energies, beta, total, n_settings, floor=100, relevance=5e-3) -> dict:
    """Shots per setting for each level.

    Levels with ``exp(-beta (E - E_min) / 2) < relevance`` get nothing.  The
    kept levels share the budget in proportion to ``sqrt(c_m)`` with
    ``c_m = exp(-beta E_m / 2) sum_n exp(-beta E_n / 2) (E_n - E_m)**2``,
    the size of the ``C_f`` terms an error in level ``m`` feeds into; this
    minimizes the summed overlap variance for a fixed budget.  Every kept
    level gets at least ``floor`` shots per setting.
    """
    keys = list(energies.keys())
    E = np.asarray([energies[k] for k in keys], dtype=float)
    if E.size == 0:
        return {}
    keep = np.exp(-beta * (E - E.min()) / 2) >= relevance
    Ek = E[keep]
    b = np.exp(-beta * (Ek - Ek.min()) / 2)
    c = b * ((b[None, :] * (Ek[None, :] - Ek[:, None]) ** 2).sum(axis=1))
    # a lone level still needs its magnitudes
    w = np.sqrt(np.maximum(c, 1e-300)) if Ek.size > 1 else np.ones(1)
    per = total / n_settings
    raw = np.maximum(per * w / w.sum(), floor)
    excess = raw.sum() - per
    above = raw - floor
    if excess > 0 and above.sum() > 0:
        raw = floor + above * max(0.0, 1 - excess / above.sum())
    alloc = dict.fromkeys(keys, 0)
    for k, r in zip(np.asarray(keys, dtype=object)[keep], raw):
        alloc[k] = int(np.floor(r))
    return alloc


def _covariance(tab):
    if tab.covariance is not None:
        return tab.covariance
    return np.diag(tab.stderr ** 2)


def orthonormalize(A) -> np.ndarray:
    """Symmetric orthonormalization ``A (A^T A)^(-1/2)``: the orthonormal set
    closest to the columns of ``A`` in the least-squares sense."""
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eigh(A.T @ A)
    if w.min() <= 1e-12 * w.max():
        raise NumericError("sampled amplitude columns are linearly dependent")
    return A @ (V / np.sqrt(w)) @ V.T


def _spectral_from(levels, amps, energies, h, orthogonalize=True, debias=False):
    A = np.stack([amps[i].table.values for i in levels], axis=1)
    E = np.array([energies[i] for i in levels])
    covs = None
    if orthogonalize:
        A = orthonormalize(A)
    elif debias:
        covs = [_covariance(amps[i].table) for i in levels]
    return rate_mod.SpectralInput.from_vectors(E, A, h, source="sampled", covariances=covs)


def run_sampled_rate(initial: StateVector, plan: SplitStepPlan, cfg: PointerConfig, surface,
                     beta: float, t_max: float, *, budget: SamplingPlan | None = None,
                     seed: int = 0, t_grid=None, dt_quad=None, eps_b: float = 1e-8,
                     q_r=None, n_boot: int = 200, plateau_bound: float = 0.05,
                     workers: int = 1) -> SampledRun:
    """Sampled ``C_f``, ``Q_r`` and ``k`` with bootstrap standard errors."""
    budget = budget or SamplingPlan()
    h = np.asarray(getattr(surface, "h", surface), dtype=float)
    joint = run_pointer(initial, plan, cfg)
    spec = estimate_spectrum(initial, plan, cfg, budget.pointer_shots, seed, joint=joint,
                             min_counts=budget.min_bin_shots)
    del joint
    if not spec.bins:
        raise EmptySpectrumError("no peak resolved in the pointer histogram")
    cache = {}
    # energy branch for every resolved bin
    first = estimate_eigenstate_amplitudes(
        spec, initial, plan, cfg, 0, seed, rounds=budget.rounds,
        energy_shots=budget.energy_shots, min_shots=budget.min_bin_shots, workers=workers,
        cache=cache)
    energies = {}
    for a in first:
        if a.low_statistics:
            continue
        b = spec.bins[a.bin_index]
        energies[a.bin_index] = a.energy if a.energy is not None else b.energy
    nu = plan.grid.nu
    alloc = allocate_setting_shots(energies, beta, budget.sign_shots, nu + 1,
                                   budget.min_setting_shots, budget.relevance)
    chosen = [i for i, s in alloc.items() if s > 0]
    second = estimate_eigenstate_amplitudes(
        spec, initial, plan, cfg, alloc, seed, rounds=budget.rounds, energy_shots=0,
        min_shots=budget.min_bin_shots, bins=chosen, workers=workers, cache=cache,
        encoding=budget.encoding)
    amps = {a.bin_index: a for a in first}
    for a in second:
        prev = amps[a.bin_index]
        a.mean_energy, a.mean_energy_err = prev.mean_energy, prev.mean_energy_err
        a.energy, a.branch = prev.energy, prev.branch
        a.shots += prev.shots
        amps[a.bin_index] = a
    levels = [i for i in chosen if amps[i].table is not None]
    if not levels:
        raise EmptySpectrumError("no bin received amplitude data")
    replicates = resample_levels(levels, amps, budget.resamples, seed, workers)
    spectral = _spectral_from(levels, amps, energies, h, budget.orthogonalize, budget.debias)
    with warnings.catch_warnings():
        # judged after bias correction
        warnings.simplefilter("ignore", rate_mod.PlateauWarning)
        res = rate_mod.rate_constant(spectral, beta, t_max, dt_quad=dt_quad, eps_b=eps_b,
                                     q_r=q_r, plateau_bound=plateau_bound, t_grid=t_grid)
    boot = bootstrap_rate(levels, amps, energies, spec, h, beta, t_max, res, eps_b=eps_b,
                          q_r=q_r, n_boot=n_boot, seed=seed, dt_quad=res.metadata["dt_quad"],
                          overlap_var=spectral.overlap_var, orthogonalize=budget.orthogonalize,
                          replicates=replicates)
    res.cf_stderr, res.k_stderr, res.q_r_stderr = boot["cf_stderr"], boot["k_stderr"], boot["q_r_stderr"]
    if budget.bias_correct:
        res = bias_correct(res, boot)
    if not res.plateau_ok:
        warnings.warn(f"rate integral has not reached a plateau (spread "
                      f"{res.plateau['spread']:.3g} > {plateau_bound})", rate_mod.PlateauWarning,
                      stacklevel=2)
    shots = dict(pointer=budget.pointer_shots,
                 sign=int(sum(amps[i].record.total_shots for i in levels)),
                 energy=int(sum(a.shots for a in first)),
                 expected_postselection_repetitions=float(
                     sum(amps[i].expected_repetitions for i in levels)))
    shots["total"] = shots["pointer"] + shots["sign"] + shots["energy"]
    res.metadata.update(shots=shots, levels=len(levels), seed=seed)
    return SampledRun(spec, [amps[k] for k in sorted(amps)], spectral, res, levels, shots, boot)


def resample_levels(levels, amps, n, seed, workers=1) -> dict | None:
    """Data-bootstrap replicates per level; also replaces each table's
    covariance and standard errors by the replicate spread."""
    if n <= 1:
        return None

    def job(i):
        return resample_amplitudes(amps[i].record, amps[i].table, n, seed, stream=i)

    if workers > 1 and len(levels) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            reps = dict(zip(levels, ex.map(job, levels)))
    else:
        reps = {i: job(i) for i in levels}
    for i, r in reps.items():
        tab = amps[i].table
        tab.covariance = np.cov(r, rowvar=False)
        tab.stderr = np.sqrt(np.diag(tab.covariance))
    return reps


def bootstrap_rate(levels, amps, energies, spec: SpectrumEstimate, h, beta, t_max, res,
                   eps_b=1e-8, q_r=None, n_boot=200, seed=0, dt_quad=None,
                   overlap_var=None, orthogonalize=True, replicates=None) -> dict:
    """Parametric bootstrap: redraw energies (phase-estimation error) and
    amplitude columns, then recompute the rate.

    Amplitude columns come from ``replicates`` (per-level data-bootstrap
    refits, cycled when ``n_boot`` exceeds their number) or, without them,
    from the least-squares covariance.  ``overlap_var`` is the same
    debiasing term as in the point estimate.
    """
    res_var = overlap_var
    if n_boot <= 1:
        z = np.zeros_like(res.cf)
        return dict(cf_stderr=z, k_stderr=0.0, q_r_stderr=0.0, n_boot=0)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAM_BOOTSTRAP,)))
    A0 = np.stack([amps[i].table.values for i in levels], axis=1)
    E0 = np.array([energies[i] for i in levels])
    Eerr = np.array([spec.bins[i].energy_err for i in levels])
    chols = []
    for i in levels if replicates is None else ():
        c = _covariance(amps[i].table)
        w, V = np.linalg.eigh(0.5 * (c + c.T))
        chols.append(V * np.sqrt(np.clip(w, 0, None))[None, :])
    var = res_var
    n = max(2, int(np.ceil(t_max / dt_quad)))
    tq = np.linspace(0.0, t_max, n + 1)
    fracs = np.array([0.5, 0.75, 1.0]) * t_max
    cfs, ks, qs, runs, plats = [], [], [], [], []
    for b in range(n_boot):
        E = E0 + rng.standard_normal(E0.size) * Eerr
        if replicates is not None:
            A = np.stack([replicates[i][b % len(replicates[i])] for i in levels], axis=1)
        else:
            A = A0 + np.stack([L @ rng.standard_normal(L.shape[1]) for L in chols], axis=1)
        A = orthonormalize(A) if orthogonalize else A / np.linalg.norm(A, axis=0)[None, :]
        sp = rate_mod.SpectralInput.from_vectors(E, A, h, source="sampled")
        sp.overlap_var = var
        q = q_r if q_r is not None else rate_mod.partition_function(sp.energies, sp.reactant_weights, beta)
        cq = rate_mod.correlation_function(sp, beta, tq, eps_b)
        run = np.concatenate([[0.0], np.cumsum(0.5 * (cq[1:] + cq[:-1]) * np.diff(tq))]) / q
        cfs.append(rate_mod.correlation_function(sp, beta, res.t, eps_b))
        ks.append(float(run[-1]))
        qs.append(q)
        runs.append(np.interp(res.t, tq, run))
        plats.append(np.interp(fracs, tq, run))
    cfs = np.array(cfs)
    return dict(cf_stderr=cfs.std(axis=0, ddof=1), k_stderr=float(np.std(ks, ddof=1)),
                q_r_stderr=float(np.std(qs, ddof=1)), n_boot=int(n_boot),
                k_mean=float(np.mean(ks)), cf_mean=cfs.mean(axis=0),
                q_r_mean=float(np.mean(qs)), running_mean=np.mean(runs, axis=0),
                plateau_mean=np.mean(plats, axis=0))


def bias_correct(res: rate_mod.RateResult, boot: dict) -> rate_mod.RateResult:
    """Replace every estimate ``x`` by ``2 x - mean(x*)`` over the bootstrap.

    Amplitude noise enters ``C_f`` quadratically, so the plain estimates
    carry a bias of the order of their variance; the replicates, drawn
    around the estimate, see the same bias once more.  The plain values are
    kept in ``metadata["uncorrected"]``.
    """
    if boot.get("n_boot", 0) < 2:
        return res
    res.metadata["uncorrected"] = dict(k=res.k, q_r=res.q_r, plateau=dict(res.plateau))
    res.k = 2 * res.k - boot["k_mean"]
    res.q_r = 2 * res.q_r - boot["q_r_mean"]
    res.cf = 2 * res.cf - boot["cf_mean"]
    res.running = 2 * res.running - boot["running_mean"]
    vals = 2 * np.array([res.plateau[k] for k in ("half", "three_quarter", "full")]) \
        - boot["plateau_mean"]
    ref = abs(vals[-1])
    spread = float((vals.max() - vals.min()) / ref) if ref > 0 else float("inf")
    res.plateau = {"half": float(vals[0]), "three_quarter": float(vals[1]),
                   "full": float(vals[2]), "spread": spread}
    res.plateau_ok = spread <= res.metadata.get("plateau_bound", 0.05)
    return res
