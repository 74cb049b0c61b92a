import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxq import oracle
from fluxq.errors import ConfigurationError
from fluxq.pointer import (PointerConfig, estimate_spectrum, fit_pointer_histogram,
                           phase_kernel, postselected_state, run_pointer, unfold_branch)
from fluxq.qreg import StateVector

from conftest import make_plan, random_state


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.integers(2, 9))
def test_phase_kernel_sums_to_one(delta, K):
    M = 2 ** K
    assert np.isclose(phase_kernel(delta - np.arange(M), M).sum(), 1.0)


def test_phase_kernel_exact_on_integer_shift():
    M = 64
    k = phase_kernel(5 - np.arange(M), M)
    assert np.isclose(k[5], 1.0) and np.isclose(k.sum(), 1.0)


@pytest.mark.parametrize("t_units,x0", [(1, 0), (2, 0), (1, 7)])
def test_pointer_marginal_matches_closed_form(t_units, x0):
    plan = make_plan(4, 0.6, "harmonic", omega=1.0)
    psi = random_state(np.random.default_rng(0), 16)
    cfg = PointerConfig(5, x0, t_units)
    got = run_pointer(StateVector(psi), plan, cfg).pointer_marginal()
    es = oracle.eigensystem(oracle.dense_step_unitary(plan))
    ref = oracle.pointer_distribution(es, psi, 5, t_units, x0)
    assert np.allclose(got, ref, atol=1e-10)


def test_postselection_purifies(harmonic6):
    es = oracle.solve(harmonic6)
    psi = es.vectors[:, :4].sum(axis=1) / 2
    cfg = PointerConfig(6)
    M = 64
    x = int(np.round(es.phases[0] * M / (2 * np.pi))) % M
    fid = []
    for rounds in (0, 2):
        st_, probs = postselected_state(StateVector(psi), harmonic6, cfg, x, rounds)
        fid.append(abs(np.vdot(es.vectors[:, 0], st_.amp)) ** 2)
        assert len(probs) == rounds + 1
    assert fid[1] >= fid[0]


def test_fit_recovers_synthetic_peaks():
    K, M = 8, 256
    x = np.arange(M)
    p = 0.6 * phase_kernel(40.3 - x, M) + 0.4 * phase_kernel(170.8 - x, M)
    counts = np.round(p * 1e6).astype(int)
    fit = fit_pointer_histogram(counts, K)
    assert fit.shifts.size == 2
    assert np.allclose(fit.shifts, [40.3, 170.8], atol=0.02)
    assert np.allclose(fit.weights, [0.6, 0.4], atol=0.01)


def test_estimate_spectrum_is_deterministic(harmonic6):
    psi = StateVector(np.full(64, 1 / 8))
    a = estimate_spectrum(psi, harmonic6, PointerConfig(7), 2000, 5)
    b = estimate_spectrum(psi, harmonic6, PointerConfig(7), 2000, 5)
    assert np.array_equal(a.counts, b.counts)
    assert a.to_dict() == b.to_dict()
    assert sum(r[4] for r in a.histogram_rows()) == 2000


def test_unfold_branch_picks_nearest():
    dt = 0.5
    q, E = unfold_branch(1.0, 1, dt, 2.0 + 2 * np.pi / dt)
    assert q == 1 and np.isclose(E, (1.0 + 2 * np.pi) / dt)


@pytest.mark.parametrize("kw", [dict(K=0), dict(K=4, x0=16), dict(K=4, t_units=-1)])
def test_pointer_config_validation(kw):
    with pytest.raises(ConfigurationError):
        PointerConfig(**kw)
