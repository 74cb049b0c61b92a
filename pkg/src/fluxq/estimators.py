"""scikit-learn style estimators over the functional modules.

Each estimator is configured by plain constructor parameters (so
``get_params``/``set_params``/``clone`` work) and builds its grid and
split-step plan in ``fit``.  States are passed as rows of ``X`` with ``N``
columns; complex rows are accepted.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import oracle, pipeline, rate
from .errors import ConfigurationError
from .pointer import PointerConfig, estimate_spectrum
from .propagator import PotentialSpec, SplitStepPlan, propagate
from .qreg import GridSpec, StateVector


def _check_states(X, n_states=None) -> np.ndarray:
    """Validate a 2-D array of (possibly complex) state rows."""
    X = np.asarray(X)
    if np.iscomplexobj(X):
        check_array(np.abs(X))
        out = np.array(X, dtype=np.complex128, ndmin=2)
    else:
        out = check_array(X, dtype=np.float64).astype(np.complex128)
    if n_states is not None and out.shape[1] != n_states:
        raise ConfigurationError(f"states need {n_states} columns, got {out.shape[1]}")
    return out


class _SystemMixin:
    """Builds ``grid_`` and ``plan_`` from the shared constructor parameters."""

    def _build(self):
        grid = GridSpec.from_spacing(self.n_dof, self.qubits_per_dof, self.dx, self.mass)
        pot = dict(self.potential or {"kind": "free"})
        kind = pot.pop("kind", "free")
        self.grid_ = grid
        self.plan_ = SplitStepPlan.build(grid, PotentialSpec(kind, **pot))
        return self.plan_


class SplitStepPropagator(_SystemMixin, TransformerMixin, BaseEstimator):
    """Propagate state rows by ``n_steps`` split-operator steps.

    Parameters
    ----------
    n_dof, qubits_per_dof : int
    dx, mass : float
    potential : dict
        Keyword arguments of :class:`~fluxq.propagator.PotentialSpec`.
    n_steps : int
    output : {"amplitudes", "density"}
    """

    def __init__(self, n_dof=1, qubits_per_dof=6, dx=0.2, mass=1.0, potential=None,
                 n_steps=1, output="amplitudes"):
        self.n_dof = n_dof
        self.qubits_per_dof = qubits_per_dof
        self.dx = dx
        self.mass = mass
        self.potential = potential
        self.n_steps = n_steps
        self.output = output

    def fit(self, X=None, y=None):
        self._build()
        self.n_features_in_ = self.grid_.n_states
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        X = _check_states(X, self.grid_.n_states)
        out = np.empty_like(X)
        for i, row in enumerate(X):
            st = StateVector(row)
            propagate(st, self.plan_, int(self.n_steps))
            out[i] = st.amp
        if self.output == "density":
            return np.abs(out) ** 2
        return out


class PhaseEstimationSpectrum(_SystemMixin, BaseEstimator):
    """Sampled pointer spectrum of one initial state.

    After ``fit``: ``spectrum_`` (:class:`~fluxq.pointer.SpectrumEstimate`),
    ``energies_``, ``weights_`` and ``histogram_``.
    """

    def __init__(self, n_dof=1, qubits_per_dof=6, dx=0.2, mass=1.0, potential=None,
                 K=8, t_units=1, x0=0, shots=10_000, seed=0):
        self.n_dof = n_dof
        self.qubits_per_dof = qubits_per_dof
        self.dx = dx
        self.mass = mass
        self.potential = potential
        self.K = K
        self.t_units = t_units
        self.x0 = x0
        self.shots = shots
        self.seed = seed

    def fit(self, X, y=None):
        plan = self._build()
        X = _check_states(X, self.grid_.n_states)
        if X.shape[0] != 1:
            raise ConfigurationError("fit expects exactly one initial state row")
        cfg = PointerConfig(self.K, self.x0, self.t_units)
        self.spectrum_ = estimate_spectrum(StateVector(X[0]), plan, cfg, self.shots, self.seed)
        self.energies_ = self.spectrum_.energies
        self.weights_ = self.spectrum_.weights
        self.histogram_ = self.spectrum_.counts.copy()
        return self

    def predict(self, X):
        """Nearest fitted peak energy for each phase in ``X[:, 0]``."""
        check_is_fitted(self, "spectrum_")
        X = check_array(X)
        if not len(self.energies_):
            return np.full(X.shape[0], np.nan)
        ph = self.spectrum_.phases
        idx = np.argmin(np.abs(np.angle(np.exp(1j * (X[:, :1] - ph[None, :])))), axis=1)
        return self.energies_[idx]


class _RateBase(_SystemMixin, RegressorMixin, BaseEstimator):
    """``predict(t)`` returns ``C_f`` at the times in ``X[:, 0]``."""

    def _surface(self):
        return rate.DividingSurface.from_threshold(self.grid_, self.surface_degree,
                                                   self.surface_threshold)

    def predict(self, X):
        check_is_fitted(self, "spectral_")
        t = check_array(X)[:, 0]
        return rate.correlation_function(self.spectral_, self.beta, t, self.eps_b)

    @property
    def k_(self):
        check_is_fitted(self, "rate_")
        return self.rate_.k


class OracleRateEstimator(_RateBase):
    """Exact ``C_f``, ``Q_r`` and ``k`` from dense diagonalization (no state needed)."""

    def __init__(self, n_dof=1, qubits_per_dof=6, dx=0.2, mass=1.0, potential=None,
                 beta=1.0, t_max=5.0, eps_b=1e-8, surface_degree=0, surface_threshold=None,
                 n_t=100):
        self.n_dof = n_dof
        self.qubits_per_dof = qubits_per_dof
        self.dx = dx
        self.mass = mass
        self.potential = potential
        self.beta = beta
        self.t_max = t_max
        self.eps_b = eps_b
        self.surface_degree = surface_degree
        self.surface_threshold = surface_threshold
        self.n_t = n_t

    def fit(self, X=None, y=None):
        plan = self._build()
        t = np.linspace(0.0, self.t_max, self.n_t)
        o = oracle.direct_correlation_and_rate(plan, self._surface(), self.beta, t, self.t_max,
                                               eps_b=self.eps_b)
        self.oracle_ = o
        self.rate_ = o.result
        self.spectral_ = o.spectral
        return self


class ThermalRateEstimator(_RateBase):
    """Sampled pipeline: phase estimation, post-selection, sign protocol, rate.

    After ``fit(X)`` with one initial state row: ``rate_`` (with bootstrap
    standard errors), ``run_`` (:class:`~fluxq.pipeline.SampledRun`) and
    ``spectral_``.
    """

    def __init__(self, n_dof=1, qubits_per_dof=8, dx=0.14, mass=1.0, potential=None,
                 beta=1.0, t_max=5.0, eps_b=1e-8, surface_degree=0, surface_threshold=None,
                 K=10, t_units=1, pointer_shots=10_000, sign_shots=87_000, energy_shots=64,
                 rounds=2, relevance=5e-3, encoding="gray", n_boot=200, n_t=100, seed=0,
                 workers=1):
        self.n_dof = n_dof
        self.qubits_per_dof = qubits_per_dof
        self.dx = dx
        self.mass = mass
        self.potential = potential
        self.beta = beta
        self.t_max = t_max
        self.eps_b = eps_b
        self.surface_degree = surface_degree
        self.surface_threshold = surface_threshold
        self.K = K
        self.t_units = t_units
        self.pointer_shots = pointer_shots
        self.sign_shots = sign_shots
        self.energy_shots = energy_shots
        self.rounds = rounds
        self.relevance = relevance
        self.encoding = encoding
        self.n_boot = n_boot
        self.n_t = n_t
        self.seed = seed
        self.workers = workers

    def fit(self, X, y=None):
        plan = self._build()
        X = _check_states(X, self.grid_.n_states)
        if X.shape[0] != 1:
            raise ConfigurationError("fit expects exactly one initial state row")
        budget = pipeline.SamplingPlan(self.pointer_shots, self.sign_shots, self.energy_shots,
                                       self.rounds, self.relevance, encoding=self.encoding)
        t = np.linspace(0.0, self.t_max, self.n_t)
        run = pipeline.run_sampled_rate(StateVector(X[0]), plan, PointerConfig(self.K, 0, self.t_units),
                                        self._surface(), self.beta, self.t_max, budget=budget,
                                        seed=self.seed, t_grid=t, eps_b=self.eps_b,
                                        n_boot=self.n_boot, workers=self.workers)
        self.run_ = run
        self.rate_ = run.result
        self.spectral_ = run.spectral
        return self
