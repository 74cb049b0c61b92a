"""Quantum register: dense state vectors, grid encoding and Born sampling.

Qubit ``q`` of a ``nu``-qubit register is bit ``nu - 1 - q`` of the basis
index, so qubit 0 is the most significant bit.  With this ordering
``amp.reshape((2,) * nu)`` has axis ``q`` equal to qubit ``q``.

Grid points are encoded degree by degree: the ``l`` bits of degree 0 occupy
the most significant positions of the index, followed by degree 1, etc.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, GridRangeError, InvariantError

#: Largest register (in qubits) the simulator will allocate.
MAX_QUBITS = 26

#: Shots are drawn in fixed-size blocks, each with its own RNG stream, so the
#: outcome of shot ``i`` depends only on ``(seed, stream, i)``.
SHOT_BLOCK = 8192

_RESONANCE_RTOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Discretization of an ``M``-dimensional configuration space.

    Parameters
    ----------
    n_dof : int
        Number of degrees of freedom ``M``.
    qubits_per_dof : int
        Qubits per degree ``l``; each degree has ``2**l`` points.
    dx : sequence of float
        Grid spacing per degree.
    dt : float
        Time step of one propagation step.
    mass : sequence of float
        Particle mass per degree.

    Notes
    -----
    The chirp-Fourier-chirp propagator is exact only when every degree
    satisfies ``mass * dx**2 / dt == 2*pi / 2**l``.  This is checked to a
    relative tolerance of 1e-12; use :meth:`from_spacing` to derive ``dt``.
    """

    n_dof: int
    qubits_per_dof: int
    dx: tuple
    dt: float
    mass: tuple

    def __post_init__(self):
        if int(self.n_dof) < 1:
            raise ConfigurationError("n_dof must be >= 1")
        if int(self.qubits_per_dof) < 1:
            raise ConfigurationError("qubits_per_dof must be >= 1")
        dx = _per_degree(self.dx, self.n_dof, "dx")
        mass = _per_degree(self.mass, self.n_dof, "mass")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "n_dof", int(self.n_dof))
        object.__setattr__(self, "qubits_per_dof", int(self.qubits_per_dof))
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ConfigurationError("dt must be positive and finite")
        if self.nu > MAX_QUBITS:
            raise ConfigurationError(
                f"register of {self.nu} qubits exceeds cap {MAX_QUBITS}")
        target = 2 * np.pi / self.points_per_dof
        for d in range(self.n_dof):
            ratio = mass[d] * dx[d] ** 2 / self.dt
            if abs(ratio - target) > _RESONANCE_RTOL * target:
                suggestion = consistent_dt(dx[d], mass[d], self.qubits_per_dof)
                raise ConfigurationError(
                    f"degree {d}: mass*dx**2/dt = {ratio:.15g} but the grid needs "
                    f"2*pi/2**l = {target:.15g}; use dt = {suggestion:.17g}")

    @classmethod
    def from_spacing(cls, n_dof, qubits_per_dof, dx, mass=1.0):
        """Build a grid whose ``dt`` satisfies the resonance constraint.

        All degrees must share the same ``mass * dx**2``.
        """
        if int(n_dof) < 1 or int(qubits_per_dof) < 1:
            raise ConfigurationError("n_dof and qubits_per_dof must be >= 1")
        dx = _per_degree(dx, n_dof, "dx")
        mass = _per_degree(mass, n_dof, "mass")
        dts = [consistent_dt(dx[d], mass[d], qubits_per_dof) for d in range(n_dof)]
        if not np.allclose(dts, dts[0], rtol=_RESONANCE_RTOL, atol=0):
            raise ConfigurationError(
                "mass*dx**2 must be equal across degrees to share one dt")
        return cls(n_dof, qubits_per_dof, dx, dts[0], mass)

    @property
    def nu(self) -> int:
        return self.n_dof * self.qubits_per_dof

    @property
    def points_per_dof(self) -> int:
        return 2 ** self.qubits_per_dof

    @property
    def n_states(self) -> int:
        return 2 ** self.nu

    @property
    def length(self) -> tuple:
        """Box length ``2**l * dx`` per degree."""
        return tuple(self.points_per_dof * d for d in self.dx)

    def coordinates(self) -> np.ndarray:
        """Integer grid coordinates of every basis index, shape ``(N, M)``."""
        j = np.arange(self.n_states)
        l, n = self.qubits_per_dof, self.points_per_dof
        cols = [(j >> (l * (self.n_dof - 1 - d))) & (n - 1) for d in range(self.n_dof)]
        return np.stack(cols, axis=1)

    def positions(self) -> np.ndarray:
        """Physical positions ``coords * dx``, shape ``(N, M)``."""
        return self.coordinates() * np.asarray(self.dx)[None, :]


def _per_degree(value, n_dof, name) -> tuple:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, n_dof)
    if arr.shape != (n_dof,):
        raise ConfigurationError(f"{name} needs one value per degree ({n_dof})")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ConfigurationError(f"{name} must be positive and finite")
    return tuple(float(v) for v in arr)


def consistent_dt(dx, mass, qubits_per_dof) -> float:
    """Time step satisfying ``mass*dx**2/dt = 2*pi/2**l``."""
    return mass * dx ** 2 * 2 ** qubits_per_dof / (2 * np.pi)


@dataclass(frozen=True)
class Shot:
    """Aggregated measurement outcome: basis index and how often it occurred."""

    outcome: int
    repeat: int


@dataclass(frozen=True)
class GateTally:
    """Running count of applied gates.

    ``n_two`` counts CNOTs and controlled phases; swaps and diagonal phases
    are tracked separately so circuit-size claims can exclude them.
    """

    n_single: int = 0
    n_two: int = 0
    n_swap: int = 0
    n_diagonal: int = 0

    @property
    def total(self) -> int:
        return self.n_single + self.n_two + self.n_swap + self.n_diagonal

    def __sub__(self, other):
        return GateTally(self.n_single - other.n_single, self.n_two - other.n_two,
                         self.n_swap - other.n_swap, self.n_diagonal - other.n_diagonal)


class StateVector:
    """Dense amplitude vector of a ``nu``-qubit register.

    Parameters
    ----------
    amp : array_like
        Complex amplitudes, length ``2**nu``.  Copied unless ``copy=False``.
    copy : bool, default True

    Attributes
    ----------
    nu : int
    amp : ndarray of complex128
    tally : GateTally
        Gates applied through :mod:`fluxq.gates` since creation.
    """

    def __init__(self, amp, copy=True):
        arr = np.array(amp, dtype=np.complex128, copy=copy)
        if arr.ndim != 1 or arr.size < 2 or arr.size & (arr.size - 1):
            raise ConfigurationError("amplitude array length must be a power of two >= 2")
        nu = arr.size.bit_length() - 1
        if nu > MAX_QUBITS:
            raise ConfigurationError(f"register of {nu} qubits exceeds cap {MAX_QUBITS}")
        self.amp = arr
        self.nu = nu
        self.tally = GateTally()

    def __len__(self):
        return self.amp.size

    def __repr__(self):
        return f"StateVector(nu={self.nu}, norm={self.norm():.12f})"

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amp, self.amp).real))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amp) ** 2

    def copy(self) -> "StateVector":
        out = StateVector(self.amp)
        out.tally = self.tally
        return out

    def inner(self, other) -> complex:
        """``<self|other>``."""
        return complex(np.vdot(self.amp, _amp(other)))

    def fidelity(self, other) -> float:
        """``|<self|other>|**2`` for normalized states."""
        return abs(self.inner(other)) ** 2

    def count(self, **kinds):
        """Add gate counts (keyword names as in :class:`GateTally`)."""
        t = self.tally
        self.tally = GateTally(t.n_single + kinds.get("n_single", 0),
                               t.n_two + kinds.get("n_two", 0),
                               t.n_swap + kinds.get("n_swap", 0),
                               t.n_diagonal + kinds.get("n_diagonal", 0))


def _amp(x):
    return x.amp if isinstance(x, StateVector) else np.asarray(x)


def new_register(nu: int) -> StateVector:
    """Register of ``nu`` qubits in ``|0...0>``."""
    if not isinstance(nu, (int, np.integer)) or not 1 <= nu <= MAX_QUBITS:
        raise ConfigurationError(f"qubit count must be in [1, {MAX_QUBITS}], got {nu!r}")
    amp = np.zeros(2 ** int(nu), dtype=np.complex128)
    amp[0] = 1.0
    return StateVector(amp, copy=False)


def grid_to_index(coords: Sequence[int], spec: GridSpec) -> int:
    """Basis index of a grid point (degree 0 most significant)."""
    coords = [int(c) for c in coords]
    if len(coords) != spec.n_dof:
        raise GridRangeError(f"expected {spec.n_dof} coordinates, got {len(coords)}")
    j = 0
    for d, c in enumerate(coords):
        if not 0 <= c < spec.points_per_dof:
            raise GridRangeError(f"coordinate {c} of degree {d} outside [0, {spec.points_per_dof})")
        j = (j << spec.qubits_per_dof) | c
    return j


def index_to_grid(j: int, spec: GridSpec) -> tuple:
    """Inverse of :func:`grid_to_index`."""
    j = int(j)
    if not 0 <= j < spec.n_states:
        raise GridRangeError(f"index {j} outside [0, {spec.n_states})")
    l, mask = spec.qubits_per_dof, spec.points_per_dof - 1
    return tuple((j >> (l * (spec.n_dof - 1 - d))) & mask for d in range(spec.n_dof))


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    """Generator for one shot block; a pure function of its arguments."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block))))


def sample_outcomes(probs, n_shots: int, seed: int, stream: int = 0) -> np.ndarray:
    """Draw ``n_shots`` i.i.d. outcomes from ``probs`` (renormalized).

    Shot ``i`` uses the uniform variate ``i % SHOT_BLOCK`` of block
    ``i // SHOT_BLOCK``, so results do not depend on how shots are batched.
    """
    p = np.asarray(probs, dtype=float)
    cdf = np.cumsum(p)
    total = cdf[-1]
    if not total > 0:
        raise InvariantError("cannot sample from an all-zero distribution")
    out = np.empty(int(n_shots), dtype=np.int64)
    for b, start in enumerate(range(0, int(n_shots), SHOT_BLOCK)):
        stop = min(start + SHOT_BLOCK, int(n_shots))
        u = block_rng(seed, stream, b).random(stop - start) * total
        out[start:stop] = np.minimum(np.searchsorted(cdf, u, side="right"), p.size - 1)
    return out


def sample_counts(probs, n_shots: int, seed: int, stream: int = 0) -> np.ndarray:
    """Histogram of :func:`sample_outcomes`."""
    p = np.asarray(probs)
    if n_shots == 0:
        return np.zeros(p.size, dtype=np.int64)
    return np.bincount(sample_outcomes(p, n_shots, seed, stream), minlength=p.size)


def measure_all(state: StateVector, n_shots: int, rng_seed: int) -> list:
    """Sample computational-basis outcomes without collapsing ``state``.

    Returns
    -------
    list of Shot
        Distinct outcomes in increasing order with their repeat counts.
    """
    if n_shots < 0:
        raise ConfigurationError("n_shots must be >= 0")
    p = state.probabilities()
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvariantError(f"state norm^2 is {p.sum():.12g}, expected 1")
    counts = sample_counts(p, n_shots, rng_seed)
    return [Shot(int(j), int(c)) for j, c in enumerate(counts) if c]
