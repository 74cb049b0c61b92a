import numpy as np
import pytest
import scipy.linalg

from fluxq import oracle, rate
from fluxq.errors import InvariantError, ResourceCapError
from fluxq.qreg import StateVector

from conftest import make_plan, random_state


def test_dft_matrix_matches_numpy():
    assert np.allclose(oracle.dft_matrix(16), np.fft.ifft(np.eye(16), axis=0) * 4)


def test_dense_cap():
    with pytest.raises(ResourceCapError):
        oracle.dft_matrix(2 ** 13)


def test_eigensystem_reconstructs_random_unitary(rng):
    Z = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    U = np.linalg.qr(Z)[0]
    es = oracle.eigensystem(U)
    R = (es.vectors * np.exp(1j * es.phases)[None, :]) @ es.vectors.conj().T
    assert np.allclose(R, U, atol=1e-10)
    assert np.all(np.diff(es.phases) >= 0)


def test_eigensystem_rejects_non_unitary():
    with pytest.raises(InvariantError):
        oracle.eigensystem(np.diag([1.0, 2.0]))


def test_degenerate_cluster_detected():
    U = np.diag(np.exp(1j * np.array([0.3, 0.3, 1.0])))
    es = oracle.eigensystem(U)
    assert list(es.multiplicity) == [2, 2, 1]


def test_solve_gives_real_frame_vectors(eckart6):
    es = oracle.solve(eckart6)
    frame = oracle.step_frame(eckart6)
    real = frame.conj()[:, None] * es.vectors
    assert np.abs(real.imag).max() < 1e-8
    assert np.all(np.diff(es.energies) >= 0)
    U = oracle.dense_step_unitary(eckart6)
    assert np.allclose(U @ es.vectors, es.vectors * np.exp(1j * es.phases)[None, :], atol=1e-10)


def test_unfolded_energies_track_mean_energy(eckart6):
    es = oracle.solve(eckart6)
    width = 2 * np.pi / eckart6.dt
    assert np.all(np.abs(es.energies - es.mean_energy) <= width / 2 + 1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_completeness_and_closure(eckart6, seed):
    psi = random_state(np.random.default_rng(seed), 64)
    es = oracle.solve(eckart6)
    assert abs(es.populations(psi).sum() - 1) < 1e-10
    assert oracle.closure_residual(es, psi) < 1e-10


def test_trace_form_independent_check(rng):
    # random Hermitian H, eigen-sum from numpy eigh vs package trace form
    A = rng.standard_normal((10, 10)) + 1j * rng.standard_normal((10, 10))
    H = (A + A.conj().T) / 4
    h = np.r_[np.zeros(5), np.ones(5)]
    E, V = np.linalg.eigh(H)
    t = np.linspace(0, 4, 9)
    O = V.conj().T @ (h[:, None] * V)
    d = E[:, None] - E[None, :]
    w = np.exp(-0.5 * (E[:, None] + E[None, :])) * d ** 2 * np.abs(O) ** 2
    ref = np.array([np.sum(w * np.cos(d * tt)) for tt in t])
    got = oracle.trace_correlation(H, h, 1.0, t)
    assert np.allclose(got, ref, atol=1e-10)
    sp = rate.SpectralInput.from_vectors(E, V, h)
    assert np.allclose(rate.correlation_function(sp, 1.0, t, eps_b=0), ref, atol=1e-10)


def test_direct_rate_self_check(eckart6):
    surf = rate.DividingSurface.from_threshold(eckart6.grid)
    t = np.linspace(0, 6.5, 100)
    o = oracle.direct_correlation_and_rate(eckart6, surf, 2.0, t, 6.5)
    assert o.max_deviation < 1e-8
    assert o.result.q_r > 0 and np.isfinite(o.result.k)


def test_pointer_distribution_normalized(harmonic6):
    es = oracle.solve(harmonic6)
    psi = np.full(64, 1 / 8)
    p = oracle.pointer_distribution(es, psi, 7)
    assert np.isclose(p.sum(), 1.0)


def test_dump_csv(tmp_path, eckart6):
    es = oracle.solve(make_plan(3, 0.5, "harmonic", omega=1.0))
    paths = oracle.dump_eigensystem_csv(es, tmp_path)
    lines = paths[1].read_text().splitlines()
    assert lines[0] == "j,n,re,im" and len(lines) == 1 + 64
