"""Elementary gates and the quantum Fourier transform.

Every public gate mutates the given :class:`~fluxq.qreg.StateVector` in
place, updates its gate tally, and returns it.  The ``_k*`` kernels work on a
bare array whose leading axis has length ``2**nu`` and may carry trailing
batch axes; the pointer module uses them on joint-register slices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, InvariantError, NumericError
from .qreg import StateVector

_SQRT_HALF = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class GateOp:
    """Record of one gate: ``kind`` is ``"H"``, ``"CNOT"``, ``"Q"``, ``"CQ"``,
    ``"SWAP"`` or ``"D"`` (diagonal phase); ``order`` is the ``l`` of
    ``Q_l``/``CQ_l``."""

    kind: str
    targets: tuple
    controls: tuple = ()
    order: int | None = None

    def __post_init__(self):
        if set(self.targets) & set(self.controls):
            raise ConfigurationError("targets and controls must be disjoint")


# kernels ---------------------------------------------------------------------

def _check_qubit(nu, *qs):
    for q in qs:
        if not 0 <= q < nu:
            raise ConfigurationError(f"qubit {q} outside register of {nu} qubits")
    if len(set(qs)) != len(qs):
        raise ConfigurationError(f"qubits {qs} must be distinct")


def _pair_view(amp, nu, a, b):
    """5-d view with the bits of qubits ``min(a,b)`` and ``max(a,b)`` on axes 1 and 3."""
    lo, hi = min(a, b), max(a, b)
    return amp.reshape(2 ** lo, 2, 2 ** (hi - lo - 1), 2, -1)


def _sel(a, b, bit_a, bit_b):
    # index tuple for the 5-d pair view
    if a < b:
        return (slice(None), bit_a, slice(None), bit_b, slice(None))
    return (slice(None), bit_b, slice(None), bit_a, slice(None))


def _kh(amp, nu, q):
    v = amp.reshape(2 ** q, 2, -1)
    a = v[:, 0, :].copy()
    b = v[:, 1, :]
    v[:, 0, :] = (a + b) * _SQRT_HALF
    v[:, 1, :] = (a - b) * _SQRT_HALF


def _kcphase(amp, nu, control, target, phase):
    v = _pair_view(amp, nu, control, target)
    v[_sel(control, target, 1, 1)] *= phase


def _kswap(amp, nu, a, b):
    v = _pair_view(amp, nu, a, b)
    s01, s10 = _sel(a, b, 0, 1), _sel(a, b, 1, 0)
    tmp = v[s01].copy()
    v[s01] = v[s10]
    v[s10] = tmp


def _kcnot(amp, nu, control, target):
    v = _pair_view(amp, nu, control, target)
    s10, s11 = _sel(control, target, 1, 0), _sel(control, target, 1, 1)
    tmp = v[s10].copy()
    v[s10] = v[s11]
    v[s11] = tmp


def _kdiag(amp, phases):
    amp.reshape(phases.size, -1)[...] *= phases[:, None]


def _kqft(amp, nu, qubits, inverse=False):
    """QFT circuit on ``qubits`` (first = most significant); returns op counts."""
    n = len(qubits)
    sign = -1.0 if inverse else 1.0
    cq = [np.exp(sign * 2j * np.pi / 2 ** l) for l in range(n + 1)]
    if not inverse:
        for p in range(n):
            _kh(amp, nu, qubits[p])
            for l in range(2, n - p + 1):
                _kcphase(amp, nu, qubits[p + l - 1], qubits[p], cq[l])
        for p in range(n // 2):
            _kswap(amp, nu, qubits[p], qubits[n - 1 - p])
    else:
        for p in range(n // 2):
            _kswap(amp, nu, qubits[p], qubits[n - 1 - p])
        for p in reversed(range(n)):
            for l in reversed(range(2, n - p + 1)):
                _kcphase(amp, nu, qubits[p + l - 1], qubits[p], cq[l])
            _kh(amp, nu, qubits[p])
    return dict(n_single=n, n_two=n * (n - 1) // 2, n_swap=n // 2)


# public gates ---------------------------------------------------------------

def apply_hadamard(state: StateVector, q: int) -> StateVector:
    """Hadamard ``R`` on qubit ``q``: ``(a, b) -> ((a+b)/sqrt2, (a-b)/sqrt2)``."""
    _check_qubit(state.nu, q)
    _kh(state.amp, state.nu, q)
    state.count(n_single=1)
    return state


def uniform_superposition(state: StateVector) -> StateVector:
    """Hadamard on every qubit of a register prepared in ``|0...0>``."""
    if abs(state.amp[0] - 1.0) > 1e-12 or np.any(state.amp[1:] != 0):
        raise InvariantError("uniform_superposition expects the |0...0> state")
    for q in range(state.nu):
        apply_hadamard(state, q)
    return state


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    """Controlled-NOT: ``|e1, e2> -> |e1, e1 xor e2>``."""
    _check_qubit(state.nu, control, target)
    _kcnot(state.amp, state.nu, control, target)
    state.count(n_two=1)
    return state


def apply_phase(state: StateVector, q: int, l: int) -> StateVector:
    """Single-qubit rotation ``Q_l = diag(1, exp(2 pi i / 2**l))``."""
    _check_qubit(state.nu, q)
    if l < 0:
        raise ConfigurationError("rotation order must be >= 0")
    state.amp.reshape(2 ** q, 2, -1)[:, 1, :] *= np.exp(2j * np.pi / 2 ** l)
    state.count(n_single=1)
    return state


def apply_controlled_phase(state: StateVector, control: int, target: int, l: int) -> StateVector:
    """Controlled ``Q_l``: ``|11>`` on (target, control) gains ``exp(2 pi i / 2**l)``."""
    _check_qubit(state.nu, control, target)
    if l < 1:
        raise ConfigurationError("rotation order l must be >= 1")
    _kcphase(state.amp, state.nu, control, target, np.exp(2j * np.pi / 2 ** l))
    state.count(n_two=1)
    return state


def apply_swap(state: StateVector, a: int, b: int) -> StateVector:
    """Exchange qubits ``a`` and ``b``."""
    _check_qubit(state.nu, a, b)
    _kswap(state.amp, state.nu, a, b)
    state.count(n_swap=1)
    return state


def diagonal_phases(F, size: int) -> np.ndarray:
    """Evaluate ``exp(i F(j))`` for ``j < size``; ``F`` is a callable or a table."""
    if callable(F):
        j = np.arange(size)
        try:
            vals = np.asarray(F(j), dtype=float)
        except (TypeError, ValueError):
            vals = None
        if vals is None or vals.shape != (size,):
            vals = np.array([float(F(int(k))) for k in j])
    else:
        vals = np.asarray(F, dtype=float)
        if vals.shape != (size,):
            raise ConfigurationError(f"phase table needs {size} entries, got {vals.shape}")
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NumericError(f"phase function is not finite at basis index j={int(bad[0])}")
    return np.exp(1j * vals)


def apply_diagonal_phase(state: StateVector, F: Callable | Sequence[float]) -> StateVector:
    """``amp[j] -> exp(i F(j)) amp[j]``.

    The function is evaluated classically and the phase applied directly;
    this is the observable action of the compute-phase-uncompute ancilla
    construction.

    Parameters
    ----------
    F : callable or array_like
        Real phase per basis index.  A callable is first tried vectorized on
        ``np.arange(N)`` and falls back to per-index calls.
    """
    _kdiag(state.amp, diagonal_phases(F, state.amp.size))
    state.count(n_diagonal=1)
    return state


def qft(state: StateVector, qubits: Sequence[int] | None = None) -> StateVector:
    """Quantum Fourier transform ``|j> -> n**-0.5 sum_j' exp(2 pi i j j'/n) |j'>``.

    Built from Hadamards and controlled phases, followed by swaps undoing the
    bit reversal.

    Parameters
    ----------
    qubits : sequence of int, optional
        Sub-register, most significant qubit first.  Defaults to all qubits.
    """
    qubits = list(range(state.nu)) if qubits is None else [int(q) for q in qubits]
    _check_qubit(state.nu, *qubits)
    state.count(**_kqft(state.amp, state.nu, qubits))
    return state


def inverse_qft(state: StateVector, qubits: Sequence[int] | None = None) -> StateVector:
    """Adjoint of :func:`qft` (the same circuit reversed with conjugate phases)."""
    qubits = list(range(state.nu)) if qubits is None else [int(q) for q in qubits]
    _check_qubit(state.nu, *qubits)
    state.count(**_kqft(state.amp, state.nu, qubits, inverse=True))
    return state


def circuit_matrix(nu: int, circuit: Callable[[StateVector], object]) -> np.ndarray:
    """Dense matrix of ``circuit`` obtained column by column from basis states."""
    n = 2 ** nu
    out = np.empty((n, n), dtype=np.complex128)
    for j in range(n):
        amp = np.zeros(n, dtype=np.complex128)
        amp[j] = 1.0
        s = StateVector(amp, copy=False)
        circuit(s)
        out[:, j] = s.amp
    return out
