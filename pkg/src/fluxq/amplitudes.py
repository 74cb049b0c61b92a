"""Signed position amplitudes from Born sampling and Hadamard interference.

For a real state ``a``, measuring after a Hadamard on qubit ``q`` gives
outcome ``i`` (bit ``q`` clear) with probability ``(a_i + a_k)**2 / 2`` and
outcome ``k = i | bit_q`` with ``(a_i - a_k)**2 / 2``.  Their difference is
``2 a_i a_k``, which fixes the relative sign of every hypercube edge with
enough amplitude on both ends.  Signs are propagated along a maximum
significance spanning tree; the remaining edges are used as a consistency
check.

Edges only join indices one bit apart, so a state whose support straddles
a large power-of-two boundary (``N / 2`` above all) can split into pieces
with no significant edge between them.  ``encoding="gray"`` relabels the
register with a CNOT cascade before the Hadamard layer; in Gray labels
neighbouring grid points and mirror points of every dyadic block are one
bit apart, which keeps nodal states connected.
"""
from __future__ import annotations

import heapq
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.optimize import least_squares

from . import gates
from .errors import ConfigurationError, InvariantError, SignInconsistencyError
from .pointer import (PointerConfig, SpectrumEstimate, postselected_state,
                      sample_mean_energy, unfold_branch)
from .propagator import SplitStepPlan
from .qreg import StateVector, sample_counts

log = logging.getLogger(__name__)

STREAM_SIGNS = 4
STREAM_RESAMPLE = 5
EXACT_TOL = 1e-12
ENCODINGS = ("binary", "gray")


def label_map(N: int, encoding: str = "binary") -> np.ndarray:
    """``p[j]`` is the register label of grid index ``j`` after the encoding circuit."""
    j = np.arange(N)
    if encoding == "binary":
        return j
    if encoding == "gray":
        return j ^ (j >> 1)
    raise ConfigurationError(f"unknown encoding {encoding!r}; expected one of {ENCODINGS}")


def apply_gray_encoding(state: StateVector) -> StateVector:
    """``|b> -> |b xor (b >> 1)>`` with ``nu - 1`` CNOTs, least significant pair first."""
    for q in range(state.nu - 1, 0, -1):
        gates.apply_cnot(state, q - 1, q)
    return state


@dataclass
class SignProtocolRecord:
    """Frequencies of the ``nu + 1`` measurement settings.

    Attributes
    ----------
    bare : ndarray, shape (N,)
        Computational-basis frequencies (estimates of ``a_j**2``).
    hadamard : ndarray, shape (nu, N)
        Frequencies after a Hadamard on qubit ``q``.
    shots : int or None
        Shots per setting; ``None`` marks exact probabilities.
    encoding : {"binary", "gray"}
        Register relabelling applied before the Hadamard layer; histograms
        are indexed by register label.
    """

    bare: np.ndarray
    hadamard: np.ndarray
    shots: int | None = None
    encoding: str = "binary"

    def __post_init__(self):
        self.bare = np.asarray(self.bare, dtype=float)
        self.hadamard = np.asarray(self.hadamard, dtype=float)
        N = self.bare.size
        if N < 2 or N & (N - 1):
            raise ConfigurationError("histogram length must be a power of two")
        if self.hadamard.shape != (self.nu, N):
            raise ConfigurationError(f"need {self.nu} Hadamard histograms of length {N}")
        if self.encoding not in ENCODINGS:
            raise ConfigurationError(f"unknown encoding {self.encoding!r}")

    @property
    def nu(self) -> int:
        return self.bare.size.bit_length() - 1

    @property
    def exact(self) -> bool:
        return self.shots is None

    @property
    def total_shots(self) -> int:
        return 0 if self.shots is None else self.shots * (self.nu + 1)

    @property
    def labels(self) -> np.ndarray:
        return label_map(self.bare.size, self.encoding)

    @classmethod
    def from_amplitudes(cls, a, encoding: str = "binary") -> "SignProtocolRecord":
        """Exact record of a real amplitude vector."""
        a = np.asarray(a, dtype=float)
        lab = np.empty_like(a)
        lab[label_map(a.size, encoding)] = a
        a = lab
        nu = a.size.bit_length() - 1
        had = np.empty((nu, a.size))
        for q in range(nu):
            v = a.reshape(2 ** q, 2, -1)
            h = np.empty_like(v)
            h[:, 0] = (v[:, 0] + v[:, 1]) ** 2 / 2
            h[:, 1] = (v[:, 0] - v[:, 1]) ** 2 / 2
            had[q] = h.ravel()
        return cls(a ** 2, had, None, encoding)


@dataclass
class SignedAmplitudeTable:
    """Real signed amplitudes with standard errors.

    ``sign`` is +1/-1 for resolved entries and 0 where the sign could not be
    determined; ``values`` carries ``sign * magnitude`` for resolved entries
    and the bare magnitude otherwise (flagged by ``determined``).  The
    convention is ``values[argmax |a|] >= 0``.
    """

    values: np.ndarray
    stderr: np.ndarray
    sign: np.ndarray
    determined: np.ndarray
    global_sign_convention: str = "largest-positive"
    inconsistencies: list = field(default_factory=list)
    covariance: np.ndarray | None = field(default=None, repr=False)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def n_undetermined(self) -> int:
        return int(np.sum(~self.determined))


def collect_sign_data(prepare: Callable[[], StateVector], shots_per_setting: int,
                      rng_seed: int, stream: int = 0, encoding: str = "binary") -> SignProtocolRecord:
    """Run the ``nu + 1`` settings on fresh preparations.

    Setting 0 measures directly; setting ``q + 1`` applies a Hadamard on
    qubit ``q`` first.  With ``encoding="gray"`` every setting starts with
    the Gray relabelling circuit.  Each setting samples its own RNG stream.
    """
    if shots_per_setting < 1:
        raise ConfigurationError("shots_per_setting must be >= 1")
    label_map(2, encoding)
    base = prepare()
    nu = base.nu
    hists = []
    for s in range(nu + 1):
        st = base if s == 0 else prepare()
        if encoding == "gray":
            apply_gray_encoding(st)
        if s:
            gates.apply_hadamard(st, s - 1)
        c = sample_counts(st.probabilities(), shots_per_setting, rng_seed,
                          (STREAM_SIGNS << 24) + stream * 64 + s)
        hists.append(c / shots_per_setting)
    return SignProtocolRecord(hists[0], np.array(hists[1:]), int(shots_per_setting), encoding)


def _edges(record: SignProtocolRecord):
    """Pairwise sign evidence: arrays ``i, k, d, z``."""
    N, nu = record.bare.size, record.nu
    ii, kk, dd, zz = [], [], [], []
    j = np.arange(N)
    for q in range(nu):
        bit = 1 << (nu - 1 - q)
        i = j[(j & bit) == 0]
        k = i | bit
        pp, pm = record.hadamard[q, i], record.hadamard[q, k]
        d = pp - pm
        if record.exact:
            z = np.where(np.abs(d) > EXACT_TOL, np.abs(d) / 1e-15, 0.0)
        else:
            var = np.maximum(pp + pm - d ** 2, 0.0) / record.shots
            # a one-count floor keeps z finite when both cells are empty
            var = np.maximum(var, 1.0 / record.shots ** 2)
            z = np.abs(d) / np.sqrt(var)
        ii.append(i); kk.append(k); dd.append(d); zz.append(z)
    return np.concatenate(ii), np.concatenate(kk), np.concatenate(dd), np.concatenate(zz)


def solve_signs(record: SignProtocolRecord, z_threshold: float = 3.0,
                inconsistency_z: float = 5.0, on_inconsistency: str = "raise") -> SignedAmplitudeTable:
    """Magnitudes from the bare histogram, signs from a spanning tree.

    Parameters
    ----------
    z_threshold : float
        Edges whose sign is resolved with fewer standard errors are not used.
    inconsistency_z : float
        Non-tree edges at least this significant must agree with the tree.
    on_inconsistency : {"raise", "report"}

    Raises
    ------
    SignInconsistencyError
        If significant edges contradict each other and ``on_inconsistency``
        is ``"raise"``.
    """
    if on_inconsistency not in ("raise", "report"):
        raise ConfigurationError("on_inconsistency must be 'raise' or 'report'")
    N = record.bare.size
    mag = np.sqrt(np.clip(record.bare, 0, None))
    if record.exact:
        se = np.zeros(N)
    else:
        se = np.sqrt(np.clip(1 - record.bare, 0, None) / (4 * record.shots))
    ii, kk, dd, zz = _edges(record)
    usable = zz >= z_threshold
    adj = [[] for _ in range(N)]
    for e in np.flatnonzero(usable):
        adj[ii[e]].append(e)
        adj[kk[e]].append(e)
    sign = np.zeros(N, dtype=int)
    root = int(np.argmax(mag))
    sign[root] = 1
    tree = np.zeros(ii.size, dtype=bool)
    heap = [(-zz[e], int(e)) for e in adj[root]]
    heapq.heapify(heap)
    while heap:
        _, e = heapq.heappop(heap)
        a, b = ii[e], kk[e]
        if sign[a] and sign[b]:
            continue
        new, old = (b, a) if sign[a] else (a, b)
        sign[new] = sign[old] * (1 if dd[e] > 0 else -1)
        tree[e] = True
        for f in adj[new]:
            other = kk[f] if ii[f] == new else ii[f]
            if not sign[other]:
                heapq.heappush(heap, (-zz[f], int(f)))
    determined = sign != 0
    # a zero amplitude needs no sign
    if record.exact:
        determined |= mag <= EXACT_TOL
    report = []
    check = (~tree) & (zz >= inconsistency_z) & determined[ii] & determined[kk] & \
        (sign[ii] != 0) & (sign[kk] != 0)
    for e in np.flatnonzero(check):
        if sign[ii[e]] * sign[kk[e]] != (1 if dd[e] > 0 else -1):
            report.append(dict(i=int(ii[e]), k=int(kk[e]), difference=float(dd[e]),
                               significance=float(zz[e])))
    if report and on_inconsistency == "raise":
        raise SignInconsistencyError(
            f"{len(report)} significant hypercube edges contradict the sign tree", report)
    values = np.where(sign != 0, sign, 1) * mag
    # back from register labels to grid indices
    p = record.labels
    inv = np.argsort(p)
    for r in report:
        r["i"], r["k"] = int(inv[r["i"]]), int(inv[r["k"]])
    return SignedAmplitudeTable(values[p], se[p], sign[p], determined[p], inconsistencies=report)


def _model(a, nu):
    N = a.size
    out = [a ** 2]
    for q in range(nu):
        v = a.reshape(2 ** q, 2, -1)
        h = np.empty_like(v)
        h[:, 0] = (v[:, 0] + v[:, 1]) ** 2 / 2
        h[:, 1] = (v[:, 0] - v[:, 1]) ** 2 / 2
        out.append(h.ravel())
    return np.concatenate(out)


def _jacobian(a, nu):
    N = a.size
    J = np.zeros(((nu + 1) * N, N))
    J[np.arange(N), np.arange(N)] = 2 * a
    j = np.arange(N)
    for q in range(nu):
        bit = 1 << (nu - 1 - q)
        i = j[(j & bit) == 0]
        k = i | bit
        rows_p = (q + 1) * N + i
        rows_m = (q + 1) * N + k
        s, d = a[i] + a[k], a[i] - a[k]
        J[rows_p, i] = s
        J[rows_p, k] = s
        J[rows_m, i] = d
        J[rows_m, k] = -d
    return J


def _jacobian_sparse(a, nu, scale):
    """:func:`_jacobian` as CSR with rows divided by ``scale``; two entries per row."""
    N = a.size
    j = np.arange(N)
    rows, cols, vals = [j], [j], [2 * a]
    for q in range(nu):
        bit = 1 << (nu - 1 - q)
        i = j[(j & bit) == 0]
        k = i | bit
        s, d = a[i] + a[k], a[i] - a[k]
        rp, rm = (q + 1) * N + i, (q + 1) * N + k
        rows += [rp, rp, rm, rm]
        cols += [i, k, i, k]
        vals += [s, s, d, -d]
    r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    return sparse.csr_matrix((v / scale[r], (r, c)), shape=((nu + 1) * N, N))


def refine_amplitudes(record: SignProtocolRecord, table: SignedAmplitudeTable) -> SignedAmplitudeTable:
    """Weighted least-squares fit of all ``nu + 1`` histograms.

    Starts from the tree solution, so the fitted signs stay in its basin;
    returns amplitudes renormalized to unit norm with a covariance from the
    Gauss-Newton approximation.
    """
    if record.exact:
        return table
    nu, S = record.nu, record.shots
    obs = np.concatenate([record.bare, record.hadamard.ravel()])
    sigma = np.sqrt(np.maximum(obs, 1.0 / S) / S)

    def resid(a):
        return (_model(a, nu) - obs) / sigma

    def jac(a):
        return _jacobian_sparse(a, nu, sigma)

    p = record.labels
    start = np.empty(p.size)
    start[p] = table.values
    sol = least_squares(resid, start, jac=jac, method="trf", tr_solver="lsmr")
    a = sol.x[p]
    J = jac(sol.x)
    cov = np.linalg.pinv((J.T @ J).toarray())[np.ix_(p, p)]
    nrm = np.linalg.norm(a)
    a, cov = a / nrm, cov / nrm ** 2
    k = int(np.argmax(np.abs(a)))
    if a[k] < 0:
        a = -a
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    sign = np.where(table.determined, np.sign(a).astype(int), 0)
    return SignedAmplitudeTable(a, se, sign, table.determined.copy(),
                                inconsistencies=table.inconsistencies, covariance=cov)


def resample_amplitudes(record: SignProtocolRecord, table: SignedAmplitudeTable, n: int,
                        rng_seed: int, stream: int = 0) -> np.ndarray:
    """Parametric data bootstrap of the least-squares fit.

    Redraws all ``nu + 1`` histograms from the probabilities of the fitted
    amplitudes and refits each replicate from the fit.  Unlike the
    Gauss-Newton covariance this stays honest for components near zero,
    where the model is flat and the linearization overstates the spread.

    Returns
    -------
    ndarray, shape (n, N)
        Unit-norm replicates in grid order, sign-aligned with ``table``.
    """
    if record.exact or n <= 0:
        return np.tile(table.values, (max(n, 0), 1))
    nu, S, N = record.nu, record.shots, record.bare.size
    p = record.labels
    fit = np.empty(N)
    fit[p] = table.values
    probs = np.clip(_model(fit, nu).reshape(nu + 1, N), 0, None)
    probs /= probs.sum(axis=1, keepdims=True)
    rng = np.random.default_rng(np.random.SeedSequence(int(rng_seed),
                                                       spawn_key=(STREAM_RESAMPLE, int(stream))))
    out = np.empty((n, N))
    for r in range(n):
        obs = np.concatenate([rng.multinomial(S, row) for row in probs]) / S
        sigma = np.sqrt(np.maximum(obs, 1.0 / S) / S)
        sol = least_squares(lambda a: (_model(a, nu) - obs) / sigma, fit,
                            jac=lambda a: _jacobian_sparse(a, nu, sigma),
                            method="trf", tr_solver="lsmr")
        a = sol.x[p]
        a /= np.linalg.norm(a)
        out[r] = a if a @ table.values >= 0 else -a
    return out


@dataclass
class EigenstateAmplitudes:
    """Amplitude table and bookkeeping for one spectral bin.

    ``table`` holds the real amplitudes of the de-phased collapsed state;
    :meth:`complex_values` restores the frame of the step eigenvectors.
    """

    bin_index: int
    table: SignedAmplitudeTable | None
    low_statistics: bool = False
    acceptance: float = 0.0
    round_probabilities: list = field(default_factory=list)
    real_residual: float = float("nan")
    real_ok: bool = True
    mean_energy: float | None = None
    mean_energy_err: float | None = None
    energy: float | None = None
    branch: int = 0
    shots: int = 0
    record: SignProtocolRecord | None = field(default=None, repr=False)

    @property
    def expected_repetitions(self) -> float:
        return 1.0 / self.acceptance if self.acceptance > 0 else float("inf")

    def complex_values(self, plan: SplitStepPlan) -> np.ndarray:
        return np.exp(0.5j * plan.V * plan.dt) * self.table.values


def realness_residual(amp) -> float:
    """``max |Im|`` after the global phase that best aligns ``amp`` with the reals."""
    a = np.asarray(amp)
    ang = 0.5 * np.angle(np.sum(a * a))
    return float(np.abs((a * np.exp(-1j * ang)).imag).max())


def _bin_amplitudes(b, initial, plan, cfg, shots, seed, rounds, energy_shots, refine,
                    real_tol, min_shots, do_signs, cache, encoding="gray"):
    if b.shots < min_shots:
        return EigenstateAmplitudes(b.index, None, low_statistics=True)
    key = (b.index, b.outcome, rounds)
    if cache is not None and key in cache:
        state, probs = cache[key]
    else:
        state, probs = postselected_state(initial, plan, cfg, b.outcome, rounds)
        if cache is not None:
            cache[key] = (state, probs)
    acc = float(np.prod(probs))
    # undo the diagonal phase exp(i V dt / 2) separating step eigenvectors
    # from real vectors
    real = gates.apply_diagonal_phase(state.copy(), -0.5 * plan.V * plan.dt)
    resid = realness_residual(real.amp)
    out = EigenstateAmplitudes(b.index, None, acceptance=acc, round_probabilities=probs,
                               real_residual=resid, real_ok=resid <= real_tol)
    pos = None
    if do_signs and shots > 0:
        rec = collect_sign_data(real.copy, shots, seed, stream=b.index, encoding=encoding)
        tab = solve_signs(rec, on_inconsistency="report")
        if refine:
            tab = refine_amplitudes(rec, tab)
        out.table, out.record = tab, rec
        out.shots += rec.total_shots
        pos = np.rint(rec.bare * shots).astype(np.int64)
    if energy_shots:
        m, e = sample_mean_energy(state, plan, energy_shots, seed, stream=b.index,
                                  position_counts=pos)
        out.mean_energy, out.mean_energy_err = m, e
        out.branch, out.energy = unfold_branch(b.pointer_phase, cfg.t_units, plan.dt, m)
        out.shots += energy_shots * (1 if pos is not None else 2)
    return out


def estimate_eigenstate_amplitudes(spectrum: SpectrumEstimate, initial: StateVector,
                                   plan: SplitStepPlan, cfg: PointerConfig,
                                   shots_per_setting, rng_seed: int, *, rounds: int = 2,
                                   energy_shots: int = 0, refine: bool = True,
                                   real_tol: float = 1e-2, min_shots: int = 5,
                                   bins=None, workers: int = 1, cache: dict | None = None,
                                   encoding: str = "gray") -> list:
    """Signed amplitudes of every spectral bin from post-selected collapses.

    Parameters
    ----------
    shots_per_setting : int or dict
        Shots per measurement setting, or a mapping ``bin index -> shots``
        (bins mapped to 0 only get the energy measurement).
    rounds : int
        Extra post-selected pointer rounds used to purify each collapse.
    energy_shots : int
        Momentum-basis shots per bin used to pick the energy branch; 0 keeps
        the principal branch.
    real_tol : float
        Largest imaginary residual of the de-phased state still treated as
        real; larger residuals are flagged via ``real_ok``.
    bins : sequence of int, optional
        Restrict to these bin indices.
    workers : int
        Thread count; results do not depend on it.
    cache : dict, optional
        Reuses post-selected states between calls (keyed by bin, reading
        and rounds).
    encoding : {"gray", "binary"}
        Register relabelling used by the sign protocol.

    Returns
    -------
    list of EigenstateAmplitudes
    """
    chosen = [b for b in spectrum.bins if bins is None or b.index in set(bins)]

    def shots_for(b):
        if isinstance(shots_per_setting, dict):
            return int(shots_per_setting.get(b.index, 0))
        return int(shots_per_setting)

    def job(b):
        s = shots_for(b)
        return _bin_amplitudes(b, initial, plan, cfg, s, rng_seed, rounds, energy_shots,
                               refine, real_tol, min_shots, s > 0, cache, encoding)

    if workers > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, chosen))
    else:
        results = [job(b) for b in chosen]
    for b, r in zip(chosen, results):
        if r.energy is not None:
            b.branch, b.energy_unfolded = r.branch, r.energy
        if r.low_statistics:
            log.warning("bin %d has %d shots: low statistics, skipped", b.index, b.shots)
        elif not r.real_ok:
            log.warning("bin %d collapsed state is not real (residual %.3g)", b.index, r.real_residual)
    return results
