"""Split-operator propagation on the qubit grid.

One step is ``D(F2) . QFT . D(F1)`` with, per degree of freedom,
``F1(j) = -pi j**2 / n`` and ``F2(j) = -pi j**2 / n + V(j dx) dt``.  When
``m dx**2 / dt = 2 pi / n`` the chirp-QFT-chirp block is exactly the free
propagator on the periodic grid, apart from a Gauss-sum phase
``exp(-i pi / 4)`` per degree that the step removes again (the phase of the
Green's-function prefactor), so that eigenphases equal ``E dt``.

The resulting step advances the state by ``exp(+i H dt)``; an eigenvector of
``H`` with energy ``E`` picks up ``exp(+i E dt)`` per step.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import gates
from .errors import ConfigurationError, NumericError
from .qreg import GridSpec, StateVector

POTENTIAL_KINDS = ("free", "harmonic", "eckart", "double_well", "tabulated")


@dataclass(frozen=True)
class PotentialSpec:
    """External potential evaluated on grid positions ``x = coords * dx``.

    Parameters
    ----------
    kind : {"free", "harmonic", "eckart", "double_well", "tabulated"}
    omega : float or sequence, optional
        Harmonic frequency per degree; ``V = sum m w**2 (x - c)**2 / 2``.
    height, width : float
        Eckart barrier ``height * sech((x - c) / width)**2`` on ``degree``.
    wall : float, default 0
        Eckart only: adds ``wall * sin(pi (x - c) / L)**2``, a smooth periodic
        confinement that rises towards the seam of the periodic box.
    a, b : float
        Double well ``a (x - c)**4 - b (x - c)**2`` on ``degree``, shifted so
        its minimum is zero.
    center : float or sequence, optional
        Defaults to the box midpoint ``L / 2`` of each degree.
    degree : int, default 0
        Degree carrying one-dimensional potentials.
    values : sequence of float, optional
        Tabulated ``V(j)`` for all ``N`` basis indices.
    """

    kind: str = "free"
    omega: object = None
    height: float | None = None
    width: float | None = None
    wall: float = 0.0
    a: float | None = None
    b: float | None = None
    center: object = None
    degree: int = 0
    values: object = None

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ConfigurationError(
                f"unknown potential kind {self.kind!r}; choose from {POTENTIAL_KINDS}")
        need = {"harmonic": ("omega",), "eckart": ("height", "width"),
                "double_well": ("a", "b"), "tabulated": ("values",)}.get(self.kind, ())
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ConfigurationError(f"{self.kind} potential needs {', '.join(missing)}")
        if self.kind == "eckart" and not self.width > 0:
            raise ConfigurationError("eckart width must be positive")
        if self.values is not None:
            object.__setattr__(self, "values", tuple(float(v) for v in np.ravel(self.values)))

    def evaluate(self, grid: GridSpec) -> np.ndarray:
        """``V(j)`` for every basis index, shape ``(N,)``."""
        n = grid.n_states
        if self.kind == "tabulated":
            v = np.asarray(self.values, dtype=float)
            if v.shape != (n,):
                raise ConfigurationError(f"tabulated potential needs {n} values, got {v.size}")
        else:
            if not 0 <= self.degree < grid.n_dof:
                raise ConfigurationError(f"potential degree {self.degree} outside grid")
            x = grid.positions()
            L = np.asarray(grid.length)
            c = L / 2 if self.center is None else np.broadcast_to(
                np.asarray(self.center, dtype=float), (grid.n_dof,))
            y = x - c[None, :]
            d = self.degree
            if self.kind == "free":
                v = np.zeros(n)
            elif self.kind == "harmonic":
                w = np.broadcast_to(np.asarray(self.omega, dtype=float), (grid.n_dof,))
                m = np.asarray(grid.mass)
                v = 0.5 * np.sum(m * w ** 2 * y ** 2, axis=1)
            elif self.kind == "eckart":
                v = self.height / np.cosh(y[:, d] / self.width) ** 2
                v = v + self.wall * np.sin(np.pi * y[:, d] / L[d]) ** 2
            else:
                # continuous minimum at y**2 = b / (2a) when a, b > 0
                v = self.a * y[:, d] ** 4 - self.b * y[:, d] ** 2
                if self.a > 0 and self.b > 0:
                    v = v + self.b ** 2 / (4 * self.a)
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            raise NumericError(f"potential not finite at basis index j={int(bad[0])}")
        return v


@dataclass(frozen=True, eq=False)
class SplitStepPlan:
    """Precomputed phase tables of one split-operator step.

    Attributes
    ----------
    grid : GridSpec
    potential : PotentialSpec
    V : ndarray
        Potential at each basis index.
    F1, F2 : ndarray
        Phase tables ``F1 = sum_d -pi c_d**2 / n`` and ``F2 = F1 + V dt``.
    global_phase : float
        ``n_dof * pi / 4``, folded into the first diagonal phase.
    """

    grid: GridSpec
    potential: PotentialSpec
    V: np.ndarray = field(repr=False)
    F1: np.ndarray = field(repr=False)
    F2: np.ndarray = field(repr=False)
    global_phase: float = 0.0

    @classmethod
    def build(cls, grid: GridSpec, potential: PotentialSpec | None = None) -> "SplitStepPlan":
        potential = potential or PotentialSpec("free")
        V = potential.evaluate(grid)
        coords = grid.coordinates()
        F1 = np.sum(-np.pi * coords.astype(float) ** 2 / grid.points_per_dof, axis=1)
        F2 = F1 + V * grid.dt
        for arr in (V, F1, F2):
            arr.setflags(write=False)
        return cls(grid, potential, V, F1, F2, grid.n_dof * np.pi / 4)

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def phases1(self) -> np.ndarray:
        return np.exp(1j * (self.F1 + self.global_phase))

    @property
    def phases2(self) -> np.ndarray:
        return np.exp(1j * self.F2)

    def degree_qubits(self, d: int) -> list:
        l = self.grid.qubits_per_dof
        return list(range(d * l, (d + 1) * l))


def load_wavefunction(state: StateVector, alpha) -> StateVector:
    """Overwrite the register with ``alpha`` (normalized with a warning if needed)."""
    a = np.asarray(alpha, dtype=np.complex128).ravel()
    if a.shape != state.amp.shape:
        raise ConfigurationError(f"wavefunction needs {state.amp.size} amplitudes, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise NumericError("wavefunction contains non-finite amplitudes")
    nrm = float(np.sqrt(np.vdot(a, a).real))
    if nrm == 0:
        raise ConfigurationError("cannot load the zero vector")
    if abs(nrm ** 2 - 1.0) > 1e-9:
        warnings.warn(f"wavefunction norm^2 {nrm**2:.6g} != 1; normalizing", stacklevel=2)
        a = a / nrm
    state.amp[:] = a
    return state


def required_qubits(dx: float, dt: float, m: float) -> int:
    """Qubits per degree ``l = log2(2 pi dt / (m dx**2))``.

    Raises
    ------
    ConfigurationError
        If the ratio is not a power of two >= 2 within 1e-9 relative.
    """
    if min(dx, dt, m) <= 0:
        raise ConfigurationError("dx, dt and m must be positive")
    ratio = 2 * np.pi * dt / (m * dx ** 2)
    l = int(round(math.log2(ratio)))
    if abs(ratio - 2.0 ** l) > 1e-9 * ratio or l < 1:
        l_near = max(1, l)
        dt_near = m * dx ** 2 * 2 ** l_near / (2 * np.pi)
        raise ConfigurationError(
            f"2*pi*dt/(m*dx**2) = {ratio:.12g} is not a power of two >= 2; "
            f"nearest consistent dt = {dt_near:.17g} (l = {l_near})")
    return l


def _step_array(amp, plan: SplitStepPlan, p1=None, p2=None):
    """One step on a bare array with leading axis ``N`` (no tally)."""
    p1 = plan.phases1 if p1 is None else p1
    p2 = plan.phases2 if p2 is None else p2
    nu = plan.grid.nu
    gates._kdiag(amp, p1)
    for d in range(plan.grid.n_dof):
        gates._kqft(amp, nu, plan.degree_qubits(d))
    gates._kdiag(amp, p2)
    return amp


def split_step(state: StateVector, plan: SplitStepPlan) -> StateVector:
    """Apply one step ``D(F2) . QFT . D(F1)`` at gate level."""
    if state.nu != plan.grid.nu:
        raise ConfigurationError(f"plan is for {plan.grid.nu} qubits, state has {state.nu}")
    gates.apply_diagonal_phase(state, plan.F1 + plan.global_phase)
    for d in range(plan.grid.n_dof):
        gates.qft(state, plan.degree_qubits(d))
    gates.apply_diagonal_phase(state, plan.F2)
    return state


def propagate(state: StateVector, plan: SplitStepPlan, n_steps: int, callback=None) -> StateVector:
    """Apply :func:`split_step` ``n_steps`` times.

    Parameters
    ----------
    callback : callable, optional
        Called as ``callback(step, state)`` after every step.
    """
    if n_steps < 0:
        raise ConfigurationError("n_steps must be >= 0")
    if state.nu != plan.grid.nu:
        raise ConfigurationError(f"plan is for {plan.grid.nu} qubits, state has {state.nu}")
    p1, p2 = plan.phases1, plan.phases2
    l = plan.grid.qubits_per_dof
    per_step = dict(n_single=l * plan.grid.n_dof, n_two=plan.grid.n_dof * l * (l - 1) // 2,
                    n_swap=plan.grid.n_dof * (l // 2), n_diagonal=2)
    for k in range(int(n_steps)):
        _step_array(state.amp, plan, p1, p2)
        state.count(**per_step)
        if callback is not None:
            callback(k + 1, state)
    return state


def kinetic_energies(grid: GridSpec) -> np.ndarray:
    """Kinetic energy of each momentum-basis index after a per-degree QFT.

    Momentum index ``k`` of a degree is read as the signed integer
    ``k - n if k >= n/2``, with ``p = 2 pi k / (n dx)`` and ``T = p**2 / 2m``.
    """
    coords = grid.coordinates()
    n = grid.points_per_dof
    k = np.where(coords >= n // 2, coords - n, coords).astype(float)
    p = 2 * np.pi * k / (n * np.asarray(grid.dx)[None, :])
    return np.sum(p ** 2 / (2 * np.asarray(grid.mass)[None, :]), axis=1)


# initial states ---------------------------------------------------------------

def gaussian_wavepacket(grid: GridSpec, center=None, width=None, momentum=0.0) -> np.ndarray:
    """Normalized periodic Gaussian ``exp(-(x-c)**2 / (4 w**2) + i p x)``.

    ``width`` is the position standard deviation of ``|psi|**2`` and defaults
    to ``L / 16``; images in neighbouring cells are summed for periodicity.
    """
    L = np.asarray(grid.length)
    c = L / 2 if center is None else np.broadcast_to(np.asarray(center, float), L.shape)
    w = L / 16 if width is None else np.broadcast_to(np.asarray(width, float), L.shape)
    p = np.broadcast_to(np.asarray(momentum, float), L.shape)
    x = grid.positions()
    psi = np.ones(grid.n_states, dtype=np.complex128)
    for d in range(grid.n_dof):
        y = x[:, d] - c[d]
        g = sum(np.exp(-(y + s * L[d]) ** 2 / (4 * w[d] ** 2)) for s in (-1, 0, 1))
        psi *= g * np.exp(1j * p[d] * x[:, d])
    return psi / np.linalg.norm(psi)


def potential_envelope(grid: GridSpec, V, gamma=0.5, tilt=0.5, degree=0) -> np.ndarray:
    """Smooth real state ``exp(-gamma V) (1 + tilt sin(2 pi (x - L/2) / L))``.

    A Boltzmann-like envelope that populates the low-lying levels; the tilt
    breaks reflection symmetry so odd states are populated as well.  Both
    factors are periodic, so no artificial jump appears at the box seam.
    """
    L = grid.length[degree]
    y = grid.positions()[:, degree] - L / 2
    psi = np.exp(-gamma * (np.asarray(V) - np.min(V))) * (1 + tilt * np.sin(2 * np.pi * y / L))
    return (psi / np.linalg.norm(psi)).astype(np.complex128)
