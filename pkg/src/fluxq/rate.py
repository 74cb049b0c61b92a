"""Flux matrix elements, flux-flux correlation and thermal rate constant.

Works on spectral data ``{E_n, O_nm, w_n}`` from either the sampled pipeline
or the dense oracle.  Units: hbar = 1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, EmptySpectrumError, NumericError
from .qreg import GridSpec


class PlateauWarning(UserWarning):
    """The running rate integral has not settled by ``T_max``."""


@dataclass(frozen=True, eq=False)
class DividingSurface:
    """Heaviside indicator ``h[j] = 1`` on the product side ``x_d > q``.

    Parameters
    ----------
    h : ndarray of {0, 1}
    degree : int
    threshold : float
    """

    h: np.ndarray
    degree: int = 0
    threshold: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if not np.all((h == 0) | (h == 1)):
            raise ConfigurationError("dividing-surface values must be 0 or 1")
        if h.all() or not h.any():
            raise ConfigurationError("dividing surface leaves one side empty; the flux vanishes")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_threshold(cls, grid: GridSpec, degree: int = 0, threshold: float | None = None):
        """Half space ``x_degree > threshold`` (default: box midpoint)."""
        if not 0 <= degree < grid.n_dof:
            raise ConfigurationError(f"surface degree {degree} outside grid")
        if threshold is None:
            threshold = grid.length[degree] / 2
        h = (grid.positions()[:, degree] > threshold).astype(float)
        return cls(h, degree, float(threshold))


@dataclass(eq=False)
class SpectralInput:
    """Energies, surface overlaps and reactant weights of a set of levels.

    Attributes
    ----------
    energies : ndarray, shape (L,)
    overlaps : ndarray, shape (L, L)
        ``O_nm = sum_j conj(a_j(n)) a_j(m) h_j``.
    reactant_weights : ndarray, shape (L,)
        ``w_n = sum_j |a_j(n)|**2 (1 - h_j)``.
    source : {"sampled", "oracle"}
    overlap_var : ndarray, shape (L, L), optional
        Sampling variance of ``O_nm``; subtracted from ``|O_nm|**2`` so the
        pair weights are unbiased.
    """

    energies: np.ndarray
    overlaps: np.ndarray
    reactant_weights: np.ndarray
    source: str = "oracle"
    overlap_var: np.ndarray | None = None

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.overlaps = np.asarray(self.overlaps)
        self.reactant_weights = np.asarray(self.reactant_weights, dtype=float)
        L = self.energies.size
        if self.overlaps.shape != (L, L) or self.reactant_weights.shape != (L,):
            raise ConfigurationError("inconsistent spectral input shapes")
        if self.overlap_var is not None:
            self.overlap_var = np.asarray(self.overlap_var, dtype=float)
            if self.overlap_var.shape != (L, L):
                raise ConfigurationError("overlap_var must match the overlap matrix")
        if not (np.all(np.isfinite(self.energies)) and np.all(np.isfinite(self.overlaps))):
            raise NumericError("spectral input contains non-finite values")

    def __len__(self):
        return self.energies.size

    @classmethod
    def from_vectors(cls, energies, vectors, h, source="oracle", covariances=None):
        """Overlaps and weights from amplitude columns ``vectors[:, n] = a(n)``.

        ``covariances`` (one ``(N, N)`` matrix per real column) gives the
        first-order variance of each overlap.
        """
        A = np.asarray(vectors)
        h = np.asarray(getattr(h, "h", h), dtype=float)
        O = A.conj().T @ (h[:, None] * A)
        w = np.real(np.sum(np.abs(A) ** 2 * (1 - h)[:, None], axis=0))
        var = None
        if covariances is not None:
            G = np.real(h[:, None] * A)
            # q[n, m] = g_n^T C_m g_n
            q = np.array([np.einsum("in,ij,jn->n", G, C, G) for C in covariances]).T
            var = q + q.T
        return cls(energies, O, w, source, var)

    def subset(self, idx) -> "SpectralInput":
        idx = np.asarray(idx)
        var = None if self.overlap_var is None else self.overlap_var[np.ix_(idx, idx)]
        return SpectralInput(self.energies[idx], self.overlaps[np.ix_(idx, idx)],
                             self.reactant_weights[idx], self.source, var)


def flux_matrix_element(E_n, E_m, O_nm, hbar: float = 1.0) -> complex:
    """``<n|F|m> = (i / hbar) (E_n - E_m) O_nm``."""
    return 1j * (E_n - E_m) * O_nm / hbar


def retained_levels(energies, beta, eps_b=1e-8) -> np.ndarray:
    """Indices with ``exp(-beta (E_n - E_min) / 2) >= eps_b``."""
    E = np.asarray(energies, dtype=float)
    if E.size == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(np.exp(-beta * (E - E.min()) / 2) >= eps_b)


def _pair_weights(spec: SpectralInput, beta, eps_b):
    keep = retained_levels(spec.energies, beta, eps_b)
    if keep.size == 0:
        raise EmptySpectrumError("no spectral level retained")
    E = spec.energies[keep]
    O2 = np.abs(spec.overlaps[np.ix_(keep, keep)]) ** 2
    if spec.overlap_var is not None:
        O2 = O2 - spec.overlap_var[np.ix_(keep, keep)]
    dE = E[:, None] - E[None, :]
    W = np.exp(-beta * (E[:, None] + E[None, :]) / 2) * dE ** 2 * O2
    np.fill_diagonal(W, 0.0)
    return W, dE


def correlation_function(spec: SpectralInput, beta, t_grid, eps_b=1e-8) -> np.ndarray:
    """``C_f(t) = sum_{n != m} exp(-beta (E_n + E_m)/2) cos((E_m - E_n) t) (E_n - E_m)**2 |O_nm|**2``.

    The ``(n, m)`` and ``(m, n)`` terms pair into cosines, so the result is
    real and even in ``t``.
    """
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    if len(spec) == 0:
        raise EmptySpectrumError("empty spectrum")
    W, dE = _pair_weights(spec, beta, eps_b)
    iu = np.triu_indices_from(W, k=1)
    w, de = 2 * W[iu], dE[iu]
    t = np.asarray(t_grid, dtype=float)
    out = np.empty(t.size)
    # chunk over time to bound memory
    step = max(1, 2 ** 22 // max(1, de.size))
    for s in range(0, t.size, step):
        out[s:s + step] = np.cos(np.outer(t[s:s + step], de)) @ w
    return out


def running_integral_exact(spec: SpectralInput, beta, t, eps_b=1e-8) -> np.ndarray:
    """Closed-form ``int_0^t C_f``: each cosine integrates to ``sin(dE t) / dE``."""
    W, dE = _pair_weights(spec, beta, eps_b)
    iu = np.triu_indices_from(W, k=1)
    w, de = 2 * W[iu], dE[iu]
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.sin(np.outer(t, de)) @ (w / np.where(de == 0, 1.0, de))


def partition_function(energies, reactant_weights, beta) -> float:
    """``Q_r = sum_n exp(-beta E_n) w_n``."""
    if not beta > 0:
        raise ConfigurationError("beta must be positive")
    E = np.asarray(energies, dtype=float)
    w = np.asarray(reactant_weights, dtype=float)
    return float(np.sum(np.exp(-beta * E) * w))


@dataclass
class RateResult:
    """Correlation function, partition function and rate constant.

    ``cf_stderr`` and ``k_stderr`` are filled by the sampled pipeline; the
    complex time ``tau = t - i beta / 2`` is recorded as ``tau_shift``.
    """

    beta: float
    t: np.ndarray
    cf: np.ndarray
    q_r: float
    k: float
    t_max: float
    running: np.ndarray
    plateau: dict
    plateau_ok: bool
    source: str = "oracle"
    n_levels: int = 0
    cf_stderr: np.ndarray | None = None
    k_stderr: float | None = None
    q_r_stderr: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def tau_shift(self) -> complex:
        return complex(0.0, -self.beta / 2)

    def to_dict(self) -> dict:
        d = dict(beta=self.beta, temperature=1.0 / self.beta, q_r=self.q_r, k=self.k,
                 t_max=self.t_max, plateau=self.plateau, plateau_ok=self.plateau_ok,
                 source=self.source, n_levels=self.n_levels,
                 tau_imag_shift=-self.beta / 2, k_stderr=self.k_stderr,
                 q_r_stderr=self.q_r_stderr, n_t=int(self.t.size), metadata=self.metadata)
        return d


def plateau_diagnostic(t, running, t_max) -> dict:
    """Running integral at ``0.5, 0.75, 1.0 * t_max`` and its relative spread."""
    vals = [float(np.interp(f * t_max, t, running)) for f in (0.5, 0.75, 1.0)]
    ref = abs(vals[-1])
    spread = (max(vals) - min(vals)) / ref if ref > 0 else (0.0 if max(vals) == min(vals) else np.inf)
    return {"half": vals[0], "three_quarter": vals[1], "full": vals[2], "spread": float(spread)}


def rate_constant(spec: SpectralInput, beta, t_max, dt_quad=None, eps_b=1e-8,
                  q_r=None, plateau_bound=0.05, t_grid=None) -> RateResult:
    """``k = (1 / Q_r) int_0^T_max C_f dt`` by the trapezoidal rule.

    Parameters
    ----------
    dt_quad : float, optional
        Quadrature step; default resolves the fastest retained frequency with
        40 points per period (and at least 2000 intervals).
    q_r : float, optional
        Fixed partition function replacing the reactant-projected trace.
    t_grid : array_like, optional
        Grid on which ``C_f`` is reported (defaults to the quadrature grid).
    """
    if not t_max > 0:
        raise ConfigurationError("T_max must be positive")
    if q_r is None:
        q_r = partition_function(spec.energies, spec.reactant_weights, beta)
    if not q_r > 0:
        raise NumericError("reactant partition function is not positive")
    keep = retained_levels(spec.energies, beta, eps_b)
    if dt_quad is None:
        E = spec.energies[keep]
        wmax = float(E.max() - E.min()) if E.size > 1 else 1.0
        dt_quad = min(t_max / 2000, 2 * np.pi / max(wmax, 1e-12) / 40)
    n = max(2, int(np.ceil(t_max / dt_quad)))
    tq = np.linspace(0.0, t_max, n + 1)
    cf = correlation_function(spec, beta, tq, eps_b)
    running = np.concatenate([[0.0], np.cumsum(0.5 * (cf[1:] + cf[:-1]) * np.diff(tq))]) / q_r
    k = float(running[-1])
    plat = plateau_diagnostic(tq, running, t_max)
    ok = plat["spread"] <= plateau_bound
    if not ok:
        warnings.warn(f"rate integral has not reached a plateau (spread {plat['spread']:.3g} "
                      f"> {plateau_bound})", PlateauWarning, stacklevel=2)
    if t_grid is not None:
        t_out = np.asarray(t_grid, dtype=float)
        cf_out = correlation_function(spec, beta, t_out, eps_b)
        run_out = np.interp(t_out, tq, running)
    else:
        t_out, cf_out, run_out = tq, cf, running
    return RateResult(float(beta), t_out, cf_out, float(q_r), k, float(t_max), run_out, plat,
                      bool(ok), spec.source, int(keep.size),
                      metadata={"dt_quad": float(tq[1] - tq[0]), "eps_b": eps_b,
                                "plateau_bound": plateau_bound})
