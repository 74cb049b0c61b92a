import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxq.amplitudes import (SignProtocolRecord, apply_gray_encoding, collect_sign_data,
                              label_map, refine_amplitudes, resample_amplitudes, solve_signs)
from fluxq.errors import ConfigurationError, SignInconsistencyError
from fluxq.qreg import StateVector


def real_state(seed, nu, floor=0.05):
    r = np.random.default_rng(seed)
    N = 2 ** nu
    mag = r.uniform(floor, 1.0, N)
    a = mag * r.choice([-1, 1], N)
    a /= np.linalg.norm(a)
    # keep every magnitude at or above the floor after normalization
    while np.abs(a).min() < floor:
        a = np.sign(a) * np.maximum(np.abs(a), floor)
        a /= np.linalg.norm(a)
    return a


def aligned_error(a, b):
    return min(np.abs(a - b).max(), np.abs(a + b).max())


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 32 - 1), st.sampled_from(["binary", "gray"]))
def test_exact_histograms_recover_state(nu, seed, encoding):
    a = real_state(seed, nu)
    tab = solve_signs(SignProtocolRecord.from_amplitudes(a, encoding))
    assert tab.determined.all()
    assert aligned_error(tab.values, a) < 1e-12


def test_gray_labels_are_a_gray_code():
    p = label_map(64, "gray")
    assert sorted(p) == list(range(64))
    steps = p[1:] ^ p[:-1]
    assert np.all((steps & (steps - 1)) == 0)


def test_gray_circuit_matches_label_map(rng):
    a = rng.standard_normal(32)
    s = apply_gray_encoding(StateVector(a / np.linalg.norm(a)))
    p = label_map(32, "gray")
    assert np.allclose(s.amp[p], a / np.linalg.norm(a))
    assert s.tally.n_two == 4


def test_nodal_state_needs_gray_encoding():
    # odd state straddling the register midpoint
    N = 64
    x = np.arange(N) - (N - 1) / 2
    a = x * np.exp(-x ** 2 / 40)
    a /= np.linalg.norm(a)
    rec_b = collect_sign_data(lambda: StateVector(a), 50_000, 0, encoding="binary")
    rec_g = collect_sign_data(lambda: StateVector(a), 50_000, 0, encoding="gray")
    err_b = aligned_error(refine_amplitudes(rec_b, solve_signs(rec_b, on_inconsistency="report")).values, a)
    err_g = aligned_error(refine_amplitudes(rec_g, solve_signs(rec_g, on_inconsistency="report")).values, a)
    assert err_g < 0.05 < err_b


def test_sampled_signs_and_refinement(rng):
    a = real_state(3, 4, floor=0.1)
    rec = collect_sign_data(lambda: StateVector(a), 100_000, 11, encoding="gray")
    tab = solve_signs(rec)
    ref = refine_amplitudes(rec, tab)
    assert aligned_error(tab.values, a) < 0.02
    assert np.linalg.norm(ref.values - a) <= np.linalg.norm(tab.values - a) + 1e-3
    assert ref.covariance.shape == (16, 16)


def test_resampled_replicates(rng):
    a = real_state(5, 3, floor=0.1)
    rec = collect_sign_data(lambda: StateVector(a), 20_000, 2)
    tab = refine_amplitudes(rec, solve_signs(rec))
    reps = resample_amplitudes(rec, tab, 8, 0, stream=1)
    assert reps.shape == (8, 8)
    assert np.allclose(np.linalg.norm(reps, axis=1), 1.0)
    assert np.all(reps @ tab.values > 0)
    again = resample_amplitudes(rec, tab, 8, 0, stream=1)
    assert np.array_equal(reps, again)


def test_contradictory_edges_raise():
    a = np.array([0.5, 0.5, 0.5, 0.5])
    rec = SignProtocolRecord.from_amplitudes(a)
    had = rec.hadamard.copy()
    # flip the evidence of one edge so the cycle is inconsistent
    had[1, [0, 1]] = had[1, [1, 0]]
    bad = SignProtocolRecord(rec.bare, had, 10 ** 6)
    with pytest.raises(SignInconsistencyError) as exc:
        solve_signs(bad)
    assert exc.value.report
    assert solve_signs(bad, on_inconsistency="report").inconsistencies


def test_zero_amplitudes_need_no_sign():
    a = np.array([0.8, 0.0, 0.6, 0.0])
    tab = solve_signs(SignProtocolRecord.from_amplitudes(a))
    assert tab.determined.all()
    assert aligned_error(tab.values, a) < 1e-12


def test_record_validation():
    with pytest.raises(ConfigurationError):
        SignProtocolRecord(np.ones(3) / 3, np.ones((1, 3)))
    with pytest.raises(ConfigurationError):
        SignProtocolRecord(np.ones(4) / 4, np.ones((1, 4)))
    with pytest.raises(ConfigurationError):
        label_map(8, "hilbert")
    with pytest.raises(ConfigurationError):
        collect_sign_data(lambda: StateVector(np.ones(4) / 2), 0, 0)
