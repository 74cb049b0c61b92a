"""Dense-matrix ground truth for every stage of the sampled pipeline.

Nothing here calls the gate-level code: the step unitary is assembled from
explicit DFT matrices and diagonal factors, eigen-data come from a complex
Schur decomposition, and correlation functions are evaluated both as an
eigen-sum and as a dense trace with matrix exponentials.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, InvariantError, ResourceCapError
from .propagator import SplitStepPlan, kinetic_energies

#: Largest matrix dimension the oracle will build.
DENSE_CAP = 2 ** 12


def _check_cap(n):
    if n > DENSE_CAP:
        raise ResourceCapError(f"dense oracle limited to N <= {DENSE_CAP}, got {n}")


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT with entry ``(j', j) = exp(2 pi i j j' / n) / sqrt(n)``."""
    if n < 1:
        raise ConfigurationError("DFT size must be >= 1")
    _check_cap(n)
    j = np.arange(n)
    # reduce jj' mod n before scaling to keep the phases accurate
    return np.exp(2j * np.pi * (np.outer(j, j) % n) / n) / np.sqrt(n)


def is_unitary(U, tol=1e-10) -> bool:
    U = np.asarray(U)
    return U.ndim == 2 and U.shape[0] == U.shape[1] and \
        np.abs(U.conj().T @ U - np.eye(U.shape[0])).max() <= tol


def dense_step_unitary(plan: SplitStepPlan) -> np.ndarray:
    """Explicit ``D(F2) . (DFT x ... x DFT) . D(F1)`` including the global phase."""
    grid = plan.grid
    _check_cap(grid.n_states)
    K = dft_matrix(grid.points_per_dof)
    full = K
    for _ in range(grid.n_dof - 1):
        full = np.kron(full, K)
    U = (np.exp(1j * plan.F2)[:, None] * full) * np.exp(1j * (plan.F1 + plan.global_phase))[None, :]
    return U


def inverse_step(plan: SplitStepPlan) -> np.ndarray:
    """Conjugate transpose of :func:`dense_step_unitary`."""
    return dense_step_unitary(plan).conj().T


@dataclass
class EigenSystem:
    """Eigen-decomposition ``U v_n = exp(+i phi_n) v_n``.

    Attributes
    ----------
    phases : ndarray
        Eigenphases on ``[0, 2 pi)``, sorted ascending.
    vectors : ndarray, shape (N, N)
        Orthonormal eigenvectors as columns.
    multiplicity : ndarray of int
        Size of the degenerate cluster each phase belongs to.
    cluster : ndarray of int
        Cluster label per eigenpair.
    """

    phases: np.ndarray
    vectors: np.ndarray
    multiplicity: np.ndarray
    cluster: np.ndarray
    energies: np.ndarray | None = None
    branch: np.ndarray | None = None
    mean_energy: np.ndarray | None = None

    def __len__(self):
        return self.phases.size

    @property
    def degenerate(self) -> np.ndarray:
        return self.multiplicity > 1

    def populations(self, psi) -> np.ndarray:
        """``|<v_n|psi>|**2``."""
        return np.abs(self.coefficients(psi)) ** 2

    def coefficients(self, psi) -> np.ndarray:
        """``xi_n = <v_n|psi>``."""
        return self.vectors.conj().T @ np.asarray(getattr(psi, "amp", psi))

    def sorted_by_energy(self) -> "EigenSystem":
        if self.energies is None:
            raise InvariantError("energies not assigned; call unfold_energies first")
        o = np.argsort(self.energies, kind="stable")
        return EigenSystem(self.phases[o], self.vectors[:, o], self.multiplicity[o],
                           self.cluster[o], self.energies[o], self.branch[o], self.mean_energy[o])


def _circular_clusters(phases, tol):
    """Label phases into clusters whose circular neighbour gaps are < tol."""
    n = phases.size
    labels = np.zeros(n, dtype=int)
    if n == 0:
        return labels
    gaps = np.diff(phases)
    lab = 0
    for i in range(1, n):
        if gaps[i - 1] >= tol:
            lab += 1
        labels[i] = lab
    if n > 1 and labels[-1] != 0 and (phases[0] + 2 * np.pi - phases[-1]) < tol:
        labels[labels == labels[-1]] = 0
    return labels


def eigensystem(U, degeneracy_tol: float = 1e-9, frame=None) -> EigenSystem:
    """Unitary-safe eigen-decomposition via the complex Schur form.

    Parameters
    ----------
    U : ndarray
        Unitary matrix.
    degeneracy_tol : float
        Phases closer than this (circularly) form one degenerate cluster.
    frame : ndarray, optional
        Diagonal phases ``exp(i theta_j)`` such that ``conj(frame) * v_n`` is
        real for a real-symmetric generator.  Eigenvectors are then rotated
        inside each cluster so that this holds, and the sign convention
        ``max |v| entry > 0`` is applied.

    Raises
    ------
    InvariantError
        If ``U`` is not unitary to 1e-10.
    """
    U = np.asarray(U, dtype=np.complex128)
    if not is_unitary(U, 1e-10):
        raise InvariantError("eigensystem requires a unitary matrix")
    _check_cap(U.shape[0])
    T, Z = scipy.linalg.schur(U, output="complex")
    phases = np.mod(np.angle(np.diag(T)), 2 * np.pi)
    order = np.argsort(phases, kind="stable")
    phases, Z = phases[order], Z[:, order]
    labels = _circular_clusters(phases, degeneracy_tol)
    mult = np.bincount(labels)[labels]
    if frame is not None:
        Z = _realify(Z, labels, np.asarray(frame))
    else:
        for n in range(Z.shape[1]):
            k = np.argmax(np.abs(Z[:, n]))
            Z[:, n] *= np.abs(Z[k, n]) / Z[k, n]
    return EigenSystem(phases, Z, mult, labels)


def _realify(Z, labels, frame):
    """Rotate eigenvectors so ``conj(frame) * v`` is real with max entry > 0."""
    Z = Z.copy()
    R = frame.conj()[:, None] * Z
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        block = R[:, idx]
        if idx.size == 1:
            v = block[:, 0]
            # phase that maximizes the real part's norm
            ang = 0.5 * np.angle(np.sum(v * v))
            v = v * np.exp(-1j * ang)
            R[:, idx[0]] = v
            continue
        # real basis of the span of real and imaginary parts
        stacked = np.concatenate([block.real, block.imag], axis=1)
        u, s, _ = np.linalg.svd(stacked, full_matrices=False)
        R[:, idx] = u[:, : idx.size]
    for n in range(R.shape[1]):
        k = np.argmax(np.abs(R[:, n]))
        R[:, n] *= np.abs(R[k, n]) / R[k, n]
    return frame[:, None] * R


def step_frame(plan: SplitStepPlan) -> np.ndarray:
    """Diagonal phases ``exp(i V dt / 2)`` relating eigenvectors of the step to
    those of its symmetric (real) counterpart."""
    return np.exp(0.5j * plan.V * plan.dt)


def mean_energies(plan: SplitStepPlan, vectors) -> np.ndarray:
    """``<v|T + V|v>`` per column, with ``T`` diagonal in the per-degree DFT basis."""
    grid = plan.grid
    shape = (grid.points_per_dof,) * grid.n_dof
    V = np.asarray(vectors)
    vk = np.fft.fftn(V.reshape(shape + (V.shape[1],)), axes=tuple(range(grid.n_dof)), norm="ortho")
    vk = vk.reshape(V.shape)
    T = kinetic_energies(grid)
    return (np.abs(vk) ** 2).T @ T + (np.abs(V) ** 2).T @ plan.V


def unfold_energies(es: EigenSystem, plan: SplitStepPlan, t_units: int = 1) -> EigenSystem:
    """Assign energies ``E = (phi + 2 pi r) / dt`` choosing the branch ``r``
    closest to the mean energy ``<T + V>`` of each eigenvector.

    On the grids used here most high-momentum states alias onto low phases;
    the mean energy picks the physically meaningful branch.
    """
    Em = mean_energies(plan, es.vectors)
    r = np.round((Em * plan.dt - es.phases) / (2 * np.pi))
    es.energies = (es.phases + 2 * np.pi * r) / plan.dt
    es.branch = r.astype(int)
    es.mean_energy = Em
    return es


def principal_energies(es: EigenSystem, plan: SplitStepPlan) -> EigenSystem:
    """Energies on the principal branch ``[0, 2 pi / dt)``."""
    es.energies = es.phases / plan.dt
    es.branch = np.zeros(es.phases.size, dtype=int)
    es.mean_energy = mean_energies(plan, es.vectors)
    return es


def solve(plan: SplitStepPlan, unfold: bool = True, degeneracy_tol: float = 1e-9) -> EigenSystem:
    """Eigen-system of the step with real-frame vectors and energies, sorted by energy."""
    es = eigensystem(dense_step_unitary(plan), degeneracy_tol, frame=step_frame(plan))
    es = unfold_energies(es, plan) if unfold else principal_energies(es, plan)
    return es.sorted_by_energy()


def pointer_distribution(es: EigenSystem, psi, K: int, t_units: int = 1, x0: int = 0) -> np.ndarray:
    """Exact pointer marginal after phase estimation on ``psi``.

    Uses the closed-form kernel ``|sum_p exp(i p (t phi - 2 pi x / M))|**2 / M**2``.
    """
    M = 2 ** K
    pops = es.populations(psi)
    x = np.arange(M)
    delta = (t_units * es.phases[:, None] * M / (2 * np.pi)) - (x[None, :] - x0)
    delta = (delta + M / 2) % M - M / 2
    kern = (np.sinc(delta) / np.sinc(delta / M)) ** 2
    return pops @ kern


def flux_operator(H, h) -> np.ndarray:
    """``F = i [H, diag(h)]``."""
    H = np.asarray(H)
    h = np.asarray(h, dtype=float)
    return 1j * (H * h[None, :] - h[:, None] * H)


def trace_correlation(H, h, beta, t_grid, projector=None) -> np.ndarray:
    """``Tr[F exp(i H tau*) F exp(-i H tau)]`` with ``tau = t - i beta / 2``.

    Matrix exponentials come from :func:`scipy.linalg.expm`.  With a
    ``projector`` ``P`` the flux is restricted to ``P F P``.
    """
    F = flux_operator(H, h)
    if projector is not None:
        F = projector @ F @ projector
    out = np.empty(len(t_grid))
    for i, t in enumerate(np.asarray(t_grid, dtype=float)):
        Em = scipy.linalg.expm(-1j * H * complex(t, -beta / 2))
        # exp(i H tau*) is the adjoint of exp(-i H tau) for Hermitian H
        val = np.trace(F @ Em.conj().T @ F @ Em)
        out[i] = val.real
    return out


@dataclass
class OracleRate:
    """Oracle rate result plus the self-check diagnostics."""

    result: object
    spectral: object
    eigensystem: EigenSystem
    trace_cf: np.ndarray
    max_deviation: float


def direct_correlation_and_rate(plan: SplitStepPlan, surface, beta, t_grid, t_max,
                                dt_quad=None, eps_b=1e-8, unfold=True, check_tol=1e-8,
                                eigsys: EigenSystem | None = None, q_r=None) -> OracleRate:
    """Exact ``C_f`` two ways, checked against each other, and the rate.

    Builds ``H_eff = sum_n E_n |n><n|`` from the step eigen-data, evaluates
    the dense trace form on ``t_grid`` and the eigen-sum form; raises if they
    differ by more than ``check_tol`` relative to ``max |C_f|``.  Both forms
    use the levels retained by the Boltzmann cutoff ``eps_b`` (the trace
    through the projector onto them); ``eps_b=0`` keeps every level.  The rate is
    integrated with :func:`fluxq.rate.rate_constant`.
    """
    from . import rate as rate_mod

    es = eigsys if eigsys is not None else solve(plan, unfold=unfold)
    h = np.asarray(getattr(surface, "h", surface), dtype=float)
    spec = rate_mod.SpectralInput.from_vectors(es.energies, es.vectors, h, source="oracle")
    t_grid = np.asarray(t_grid, dtype=float)
    eig_cf = rate_mod.correlation_function(spec, beta, t_grid, eps_b=eps_b)
    H = (es.vectors * es.energies[None, :]) @ es.vectors.conj().T
    H = 0.5 * (H + H.conj().T)
    # restrict the trace to the levels kept by the Boltzmann cutoff
    keep = rate_mod.retained_levels(es.energies, beta, eps_b)
    P = es.vectors[:, keep] @ es.vectors[:, keep].conj().T
    tr_cf = trace_correlation(H, h, beta, t_grid, projector=P)
    scale = max(np.abs(tr_cf).max(), np.abs(eig_cf).max(), 1e-300)
    dev = float(np.abs(tr_cf - eig_cf).max() / scale) if t_grid.size else 0.0
    if dev > check_tol:
        raise InvariantError(f"eigen-sum and trace forms of C_f differ by {dev:.3g} (relative)")
    res = rate_mod.rate_constant(spec, beta, t_max, dt_quad=dt_quad, eps_b=eps_b, q_r=q_r,
                                 t_grid=t_grid)
    return OracleRate(res, spec, es, tr_cf, dev)


def closure_residual(es: EigenSystem, psi) -> float:
    """``max_j |sum_n xi_n a_j(n) - psi_j|`` for exact coefficients."""
    psi = np.asarray(getattr(psi, "amp", psi))
    xi = es.coefficients(psi)
    return float(np.abs(es.vectors @ xi - psi).max())


def dump_eigensystem_csv(es: EigenSystem, directory) -> list:
    """Write ``eigenphases.csv`` and ``eigenvectors.csv``; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p1, p2 = d / "eigenphases.csv", d / "eigenvectors.csv"
    with p1.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "phase", "energy", "branch", "multiplicity"])
        for n in range(len(es)):
            E = "" if es.energies is None else repr(float(es.energies[n]))
            r = "" if es.branch is None else int(es.branch[n])
            w.writerow([n, repr(float(es.phases[n])), E, r, int(es.multiplicity[n])])
    with p2.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "n", "re", "im"])
        for n in range(len(es)):
            for j in range(es.vectors.shape[0]):
                v = es.vectors[j, n]
                w.writerow([j, n, repr(float(v.real)), repr(float(v.imag))])
    return [p1, p2]
