"""Von Neumann pointer measurement (phase estimation) on the main register.

The joint register holds the ``nu`` main qubits followed by ``K`` pointer
qubits, so the joint amplitude array reshaped to ``(2**nu, 2**K)`` has the
main index on rows and the pointer reading on columns.

Conditional evolution is QFT on the pointer, then ``U**(p * t_units)`` on
the main register for pointer momentum ``p`` (one controlled ``U**(2**k)``
per pointer qubit), then the inverse QFT.  With ``U v = exp(i phi) v`` the
pointer moves from ``x0`` to ``x0 + t_units * phi * 2**K / (2 pi)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import gates
from .errors import ConfigurationError, InvariantError, ResourceCapError
from .propagator import SplitStepPlan, _step_array, kinetic_energies
from .qreg import MAX_QUBITS, StateVector, sample_counts, sample_outcomes

log = logging.getLogger(__name__)

# RNG stream tags (see qreg.block_rng)
STREAM_POINTER = 1
STREAM_POSITION = 2
STREAM_MOMENTUM = 3


@dataclass(frozen=True)
class PointerConfig:
    """Pointer register: ``K`` qubits, initial reading ``x0``, and the number
    of base steps ``t_units`` per unit of conditional evolution."""

    K: int
    x0: int = 0
    t_units: int = 1

    def __post_init__(self):
        if not 1 <= int(self.K) <= 16:
            raise ConfigurationError("pointer needs 1 <= K <= 16 qubits")
        if not 0 <= int(self.x0) < 2 ** int(self.K):
            raise ConfigurationError("x0 must be a K-bit reading")
        if int(self.t_units) < 0:
            raise ConfigurationError("t_units must be >= 0")

    @property
    def n_readings(self) -> int:
        return 2 ** self.K

    @property
    def resolution(self) -> float:
        """Phase resolution ``2 pi / 2**K``."""
        return 2 * np.pi / 2 ** self.K


class JointState:
    """Main register entangled with a pointer register.

    Parameters
    ----------
    state : StateVector
        ``nu + K`` qubit register (main qubits most significant).
    nu : int
    K : int
    factorized : bool
        True while the state is known to be ``main (x) pointer``.
    """

    def __init__(self, state: StateVector, nu: int, K: int, factorized=False):
        if state.nu != nu + K:
            raise InvariantError("joint register size mismatch")
        self.state = state
        self.nu = nu
        self.K = K
        self.factorized = factorized
        self.consumed = False
        self.base_steps = 0

    @property
    def matrix(self) -> np.ndarray:
        """View of the amplitudes as ``(2**nu, 2**K)``."""
        return self.state.amp.reshape(2 ** self.nu, 2 ** self.K)

    @property
    def pointer_qubits(self) -> list:
        return list(range(self.nu, self.nu + self.K))

    def main_marginal(self) -> np.ndarray:
        return np.sum(np.abs(self.matrix) ** 2, axis=1)

    def pointer_marginal(self) -> np.ndarray:
        return np.sum(np.abs(self.matrix) ** 2, axis=0)

    def norm(self) -> float:
        return self.state.norm()

    def _require_live(self):
        if self.consumed:
            raise InvariantError("joint state was consumed by a measurement")


def attach_pointer(main: StateVector, cfg: PointerConfig) -> JointState:
    """``main (x) |x0>``."""
    if main.nu + cfg.K > MAX_QUBITS:
        raise ResourceCapError(f"joint register of {main.nu + cfg.K} qubits exceeds cap {MAX_QUBITS}")
    ptr = np.zeros(cfg.n_readings, dtype=np.complex128)
    ptr[cfg.x0] = 1.0
    st = StateVector(np.outer(main.amp, ptr).ravel(), copy=False)
    st.tally = main.tally
    return JointState(st, main.nu, cfg.K, factorized=True)


def conditional_evolution(joint: JointState, plan: SplitStepPlan, cfg: PointerConfig) -> JointState:
    """QFT on the pointer, controlled powers of the step, inverse QFT.

    For a joint state still in product form the controlled powers are
    evaluated by stepping one main-register vector through ``U**(p t)`` for
    ``p = 0 .. 2**K - 1``; otherwise each pointer qubit ``k`` (weight
    ``2**k``) applies ``U**(2**k t)`` to the half of the columns where it
    is set.  Both give the same joint state.
    """
    joint._require_live()
    if plan.grid.nu != joint.nu or cfg.K != joint.K:
        raise ConfigurationError("plan or pointer config does not match the joint state")
    t = int(cfg.t_units)
    M = cfg.n_readings
    gates.qft(joint.state, joint.pointer_qubits)
    mat = joint.matrix
    if t > 0:
        p1, p2 = plan.phases1, plan.phases2
        if joint.factorized:
            # column p is c_p * psi with a common main vector psi
            ref = int(np.argmax(np.abs(mat).sum(axis=0)))
            c = mat[:, ref]
            k = int(np.argmax(np.abs(c)))
            coeff = mat[k, :] / c[k]
            vec = c.copy()
            for p in range(M):
                mat[:, p] = coeff[p] * vec
                if p < M - 1:
                    for _ in range(t):
                        _step_array(vec, plan, p1, p2)
            joint.base_steps += (M - 1) * t
        else:
            cols = np.arange(M)
            for k in range(cfg.K):
                idx = np.flatnonzero((cols >> k) & 1)
                sub = np.ascontiguousarray(mat[:, idx])
                for _ in range((2 ** k) * t):
                    _step_array(sub, plan, p1, p2)
                mat[:, idx] = sub
                joint.base_steps += (2 ** k) * t
    gates.inverse_qft(joint.state, joint.pointer_qubits)
    joint.factorized = False
    return joint


def postselect(joint: JointState, x: int):
    """Probability of pointer reading ``x`` and the renormalized main state."""
    joint._require_live()
    col = joint.matrix[:, int(x)]
    p = float(np.vdot(col, col).real)
    if p <= 0:
        raise InvariantError(f"pointer reading {x} has zero probability")
    st = StateVector(col / np.sqrt(p))
    st.tally = joint.state.tally
    return p, st


def measure_pointer(joint: JointState, rng_seed: int, shot_index: int = 0):
    """Sample a pointer reading and collapse the main register.

    Returns
    -------
    x_out : int
    main : StateVector
        Renormalized conditional main state; the joint state is consumed.
    """
    joint._require_live()
    probs = joint.pointer_marginal()
    x = int(sample_outcomes(probs, shot_index + 1, rng_seed, STREAM_POINTER)[shot_index])
    _, main = postselect(joint, x)
    joint.consumed = True
    return x, main


def run_pointer(initial: StateVector, plan: SplitStepPlan, cfg: PointerConfig) -> JointState:
    """Prepare, attach the pointer and apply conditional evolution."""
    return conditional_evolution(attach_pointer(initial, cfg), plan, cfg)


def postselected_state(initial: StateVector, plan: SplitStepPlan, cfg: PointerConfig,
                       x: int, rounds: int = 0):
    """Collapse on reading ``x``, then repeat the pointer measurement
    ``rounds`` more times on the collapsed state, keeping only runs that
    read ``x`` every time.

    Each round multiplies eigencomponent ``n`` by its kernel amplitude at
    ``x``, suppressing neighbouring levels that leaked into the bin.

    Returns
    -------
    state : StateVector
    probabilities : list of float
        Success probability of each round; their product is the
        post-selection acceptance rate.
    """
    probs = []
    state = initial
    for _ in range(rounds + 1):
        p, state = postselect(run_pointer(state, plan, cfg), x)
        probs.append(p)
    return state, probs


# histogram model ---------------------------------------------------------------

def phase_kernel(delta, M: int) -> np.ndarray:
    """Probability of reading ``x`` when the exact shift is ``x + delta``.

    ``|sum_p exp(2 pi i p delta / M)|**2 / M**2``, periodic in ``delta``
    with period ``M``.
    """
    d = (np.asarray(delta, dtype=float) + M / 2) % M - M / 2
    return (np.sinc(d) / np.sinc(d / M)) ** 2


def _amplitude(delta, M):
    # signed kernel amplitude; phase_kernel == _amplitude**2
    d = (np.asarray(delta, dtype=float) + M / 2) % M - M / 2
    return np.sinc(d) / np.sinc(d / M)


def _amplitude_deriv(delta, M):
    h = 1e-5
    return (_amplitude(delta + h, M) - _amplitude(delta - h, M)) / (2 * h)


@dataclass
class PeakFit:
    shifts: np.ndarray
    weights: np.ndarray
    background: float
    shift_err: np.ndarray
    weight_err: np.ndarray
    loglik: float


def _mixture(x, shifts, weights, background, M):
    p = np.full(x.size, background / M)
    for s, w in zip(shifts, weights):
        p += w * phase_kernel(s - x, M)
    return p


def _em(counts, shifts, weights, background, M, n_iter=200, tol=1e-10, window=12):
    x = np.arange(M)
    N = counts.sum()
    shifts = np.array(shifts, dtype=float)
    weights = np.array(weights, dtype=float)
    prev = -np.inf
    ll = prev
    for _ in range(n_iter):
        comp = np.array([phase_kernel(s - x, M) for s in shifts]) if shifts.size else np.zeros((0, M))
        mix = weights @ comp + background / M
        mix = np.maximum(mix, 1e-300)
        ll = float(np.sum(counts * np.log(mix)))
        if ll - prev < tol * max(1.0, abs(ll)):
            break
        prev = ll
        resp = weights[:, None] * comp / mix[None, :]
        nk = resp @ counts
        weights = nk / N
        background = float(np.sum(counts * (background / M) / mix) / N)
        for c in range(shifts.size):
            s0 = shifts[c]
            xs = (np.round(s0) + np.arange(-window, window + 1)).astype(int) % M
            wts = counts[xs] * resp[c, xs]
            if wts.sum() <= 0:
                continue

            def nll(s, xs=xs, wts=wts):
                return -np.sum(wts * np.log(np.maximum(phase_kernel(s - xs, M), 1e-300)))

            # the likelihood has a mirror minimum about the nearest integer;
            # a coarse scan picks the right basin before the bounded search
            grid = s0 + np.linspace(-1.0, 1.0, 41)
            kern = np.maximum(phase_kernel(grid[:, None] - xs[None, :], M), 1e-300)
            g = grid[int(np.argmax(np.log(kern) @ wts))]
            r = minimize_scalar(nll, bounds=(g - 0.05, g + 0.05), method="bounded",
                                options={"xatol": 1e-7})
            shifts[c] = r.x % M
    return shifts, weights, background, ll


def fit_pointer_histogram(counts, K: int, z_min: float = 5.0, min_counts: int = 5,
                          max_components: int = 200, merge_distance: float = 1.0,
                          background: bool = True) -> PeakFit:
    """Decompose a pointer histogram into phase-estimation kernels.

    Components are added greedily where the observed counts exceed the
    current model by ``z_min`` Poisson standard deviations (so sidelobes of
    strong peaks are not mistaken for levels), then all shifts and weights
    are refined jointly by expectation-maximization.  Components closer than
    ``merge_distance`` bins are merged.

    Parameters
    ----------
    counts : array_like of int, length ``2**K``
    z_min : float
        Detection threshold in standard deviations.
    min_counts : int
        Minimum counts in the candidate bin.
    background : bool
        Fit a uniform background weight absorbing unresolved small levels.

    Returns
    -------
    PeakFit
        Shifts are fractional pointer readings.
    """
    counts = np.asarray(counts, dtype=float)
    M = 2 ** K
    if counts.shape != (M,):
        raise ConfigurationError(f"histogram needs {M} bins")
    N = counts.sum()
    x = np.arange(M)
    shifts, weights = np.zeros(0), np.zeros(0)
    bg = 1e-3 if background else 0.0
    if N == 0:
        return PeakFit(shifts, weights, 0.0, shifts, weights, 0.0)
    for _ in range(max_components):
        model = N * _mixture(x, shifts, weights, bg, M)
        z = (counts - model) / np.sqrt(model + 1.0)
        z[counts < min_counts] = -np.inf
        cand = int(np.argmax(z))
        if z[cand] < z_min:
            break
        # sub-bin start from the two-point centroid
        lo, hi = counts[(cand - 1) % M], counts[(cand + 1) % M]
        s0 = cand + 0.5 * (hi - lo) / max(counts[cand] + max(lo, hi), 1.0)
        w0 = max(counts[cand] - model[cand], 1.0) / N / 0.8
        shifts = np.append(shifts, s0 % M)
        weights = np.append(weights, w0)
        tot = weights.sum() + bg
        weights, bg = weights / tot, bg / tot
        shifts, weights, bg, _ = _em(counts, shifts, weights, bg, M, n_iter=30)
        if not background:
            bg = 0.0
        shifts, weights = _merge(shifts, weights, merge_distance, M)
    shifts, weights, bg, ll = _em(counts, shifts, weights, bg, M, n_iter=500)
    shifts, weights = _merge(shifts, weights, merge_distance, M)
    order = np.argsort(shifts)
    shifts, weights = shifts[order], weights[order]
    # errors: binomial weights; for shifts the single-peak Fisher information
    # N w sum_x (dK/ds)**2 / K = 4 N w sum_x (dA/ds)**2, finite at integer shifts
    s_err = np.empty(shifts.size)
    for c, s in enumerate(shifts):
        info = 4 * N * weights[c] * np.sum(_amplitude_deriv(s - x, M) ** 2)
        s_err[c] = 1.0 / np.sqrt(info) if info > 0 else np.inf
    w_err = np.sqrt(np.clip(weights * (1 - weights), 0, None) / N)
    return PeakFit(shifts, weights, float(bg), s_err, w_err, float(ll))


def _merge(shifts, weights, dist, M):
    if shifts.size < 2:
        return shifts, weights
    order = np.argsort(shifts)
    s, w = list(shifts[order]), list(weights[order])
    i = 0
    while len(s) > 1 and i < len(s):
        j = (i + 1) % len(s)
        gap = (s[j] - s[i]) % M
        if gap < dist and i != j:
            tot = w[i] + w[j]
            # weighted circular mean
            s_new = (s[i] + gap * w[j] / tot) % M
            s[i], w[i] = s_new, tot
            del s[j], w[j]
            if j < i:
                i -= 1
            continue
        i += 1
    return np.array(s), np.array(w)


# spectrum estimate ------------------------------------------------------------

@dataclass
class SpectralBin:
    """One resolved peak of the pointer histogram.

    ``shift`` is the fitted fractional pointer reading and ``outcome`` the
    reading used for post-selection.  ``phase`` is the step eigenphase on
    ``[0, 2 pi / t_units)`` and ``energy = phase / dt`` the principal-branch
    energy; ``energy_unfolded`` is set once the branch is known.
    """

    index: int
    shift: float
    outcome: int
    pointer_phase: float
    phase: float
    phase_err: float
    energy: float
    energy_err: float
    weight: float
    weight_err: float
    shots: int
    position_counts: np.ndarray = field(repr=False, default=None)
    degenerate: bool = False
    branch: int = 0
    energy_unfolded: float | None = None

    def to_dict(self) -> dict:
        return dict(index=self.index, shift=self.shift, outcome=self.outcome,
                    pointer_phase=self.pointer_phase, phase=self.phase,
                    phase_err=self.phase_err, energy=self.energy,
                    energy_err=self.energy_err, weight=self.weight,
                    weight_err=self.weight_err, shots=self.shots,
                    degenerate=self.degenerate, branch=self.branch,
                    energy_unfolded=self.energy_unfolded)


@dataclass
class SpectrumEstimate:
    """Resolved pointer peaks plus the raw histogram they were fitted from."""

    bins: list
    counts: np.ndarray
    n_shots: int
    K: int
    t_units: int
    x0: int
    dt: float
    background: float = 0.0

    def __len__(self):
        return len(self.bins)

    @property
    def energies(self) -> np.ndarray:
        return np.array([b.energy for b in self.bins])

    @property
    def weights(self) -> np.ndarray:
        return np.array([b.weight for b in self.bins])

    @property
    def phases(self) -> np.ndarray:
        return np.array([b.phase for b in self.bins])

    def histogram_rows(self):
        """``(bin, phase, energy, weight, shots)`` per pointer reading."""
        M = 2 ** self.K
        N = max(self.n_shots, 1)
        for x in range(M):
            theta = 2 * np.pi * ((x - self.x0) % M) / M
            phase = theta / self.t_units if self.t_units else 0.0
            yield (x, phase, phase / self.dt, self.counts[x] / N, int(self.counts[x]))

    def to_dict(self) -> dict:
        return dict(n_shots=self.n_shots, K=self.K, t_units=self.t_units, x0=self.x0,
                    dt=self.dt, background=self.background,
                    bins=[b.to_dict() for b in self.bins])


def estimate_spectrum(initial: StateVector, plan: SplitStepPlan, cfg: PointerConfig,
                      n_shots: int, rng_seed: int, *, joint: JointState | None = None,
                      z_min: float = 5.0, min_counts: int = 5,
                      position_samples: bool = True) -> SpectrumEstimate:
    """Sample pointer readings, fit peaks and convert them to energies.

    The conditional evolution is deterministic, so the joint state is
    computed once and every shot samples it afresh; shot ``i`` draws from
    the stream ``(rng_seed, pointer, i)``.  For each shot the collapsed main
    register is also measured once in the position basis, and these
    position counts are accumulated per peak.
    """
    if n_shots < 0:
        raise ConfigurationError("n_shots must be >= 0")
    M = cfg.n_readings
    if joint is None:
        joint = run_pointer(initial, plan, cfg)
    if n_shots == 0:
        return SpectrumEstimate([], np.zeros(M, dtype=np.int64), 0, cfg.K, cfg.t_units,
                                cfg.x0, plan.dt)
    pm = joint.pointer_marginal()
    outcomes = sample_outcomes(pm, n_shots, rng_seed, STREAM_POINTER)
    counts = np.bincount(outcomes, minlength=M)
    fit = fit_pointer_histogram(counts, cfg.K, z_min=z_min, min_counts=min_counts)
    t = max(cfg.t_units, 1)
    # assign each reading to its most responsible component
    x = np.arange(M)
    if fit.shifts.size:
        comp = np.array([w * phase_kernel(s - x, M) for s, w in zip(fit.shifts, fit.weights)])
        owner = np.argmax(comp, axis=0)
        owned = comp[owner, x] > fit.background / M
    else:
        owner = np.full(M, -1)
        owned = np.zeros(M, dtype=bool)
    mat = joint.matrix
    bins = []
    for c, (s, w) in enumerate(zip(fit.shifts, fit.weights)):
        theta = 2 * np.pi * ((s - cfg.x0) % M) / M
        mine = owned & (owner == c)
        pos = None
        if position_samples:
            pos = np.zeros(mat.shape[0], dtype=np.int64)
            for xi in np.flatnonzero(mine & (counts > 0)):
                col = np.abs(mat[:, xi]) ** 2
                pos += sample_counts(col, int(counts[xi]), rng_seed, STREAM_POSITION * 65536 + int(xi))
        phase = theta / t
        perr = 2 * np.pi * fit.shift_err[c] / M / t
        bins.append(SpectralBin(
            index=c, shift=float(s), outcome=int(np.round(s)) % M, pointer_phase=float(theta),
            phase=float(phase), phase_err=float(perr), energy=float(phase / plan.dt),
            energy_err=float(perr / plan.dt), weight=float(w), weight_err=float(fit.weight_err[c]),
            shots=int(counts[mine].sum()), position_counts=pos))
    log.info("pointer histogram: %d shots, %d peaks, background %.3g", n_shots, len(bins), fit.background)
    return SpectrumEstimate(bins, counts, int(n_shots), cfg.K, cfg.t_units, cfg.x0, plan.dt,
                            fit.background)


def flag_degenerate(est: SpectrumEstimate, eigsys, plan: SplitStepPlan, tol_bins: float = 2.0):
    """Mark bins lying within ``tol_bins`` of a degenerate oracle cluster."""
    M = 2 ** est.K
    for b in est.bins:
        for phi, mult in zip(eigsys.phases, eigsys.multiplicity):
            if mult < 2:
                continue
            d = (max(est.t_units, 1) * phi * M / (2 * np.pi) - (b.shift - est.x0)) % M
            if min(d, M - d) <= tol_bins:
                b.degenerate = True
                break
    return est


# branch unfolding ---------------------------------------------------------------

def sample_mean_energy(state: StateVector, plan: SplitStepPlan, n_shots: int, rng_seed: int,
                       stream: int = 0, position_counts=None):
    """Estimate ``<T + V>`` from measurements.

    Kinetic energy comes from momentum-basis shots (per-degree QFT, then a
    computational-basis measurement); potential energy from position shots,
    either supplied as ``position_counts`` or drawn here.

    Returns
    -------
    mean, stderr : float
    """
    grid = plan.grid
    mom = state.copy()
    for d in range(grid.n_dof):
        gates.qft(mom, plan.degree_qubits(d))
    T = kinetic_energies(grid)
    kc = sample_counts(mom.probabilities(), n_shots, rng_seed, STREAM_MOMENTUM * 65536 + stream)
    if position_counts is None:
        position_counts = sample_counts(state.probabilities(), n_shots, rng_seed,
                                        STREAM_POSITION * 65536 + 32768 + stream)
    pc = np.asarray(position_counts)
    out = []
    for c, vals in ((kc, T), (pc, plan.V)):
        n = c.sum()
        m = float(c @ vals / n)
        var = float(c @ (vals - m) ** 2 / max(n - 1, 1))
        out.append((m, var / n))
    mean = out[0][0] + out[1][0]
    return mean, float(np.sqrt(out[0][1] + out[1][1]))


def unfold_branch(pointer_phase: float, t_units: int, dt: float, mean_energy: float):
    """Branch ``q`` and energy ``(theta + 2 pi q) / (t_units dt)`` closest to ``mean_energy``."""
    t = max(int(t_units), 1)
    q = int(np.round((mean_energy * dt * t - pointer_phase) / (2 * np.pi)))
    return q, (pointer_phase + 2 * np.pi * q) / (t * dt)
