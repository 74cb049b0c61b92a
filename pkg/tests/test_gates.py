import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxq import gates
from fluxq.errors import ConfigurationError, NumericError
from fluxq.qreg import StateVector, new_register

H1 = np.array([[1, 1], [1, -1]]) / np.sqrt(2)


def single(nu, q, m):
    # qubit 0 is the leftmost kron factor
    out = np.eye(1)
    for k in range(nu):
        out = np.kron(out, m if k == q else np.eye(2))
    return out


def dense_dft(n):
    # + sign kernel, built from numpy's inverse FFT
    return np.fft.ifft(np.eye(n), axis=0) * np.sqrt(n)


@pytest.mark.parametrize("nu,q", [(1, 0), (3, 0), (3, 2), (4, 1)])
def test_hadamard_matches_kron(nu, q):
    U = gates.circuit_matrix(nu, lambda s: gates.apply_hadamard(s, q))
    assert np.allclose(U, single(nu, q, H1), atol=1e-14)


@pytest.mark.parametrize("c,t", [(0, 1), (1, 0), (0, 2), (2, 1)])
def test_cnot_and_cphase(c, t):
    nu = 3
    j = np.arange(2 ** nu)
    bit = lambda q: (j >> (nu - 1 - q)) & 1
    perm = j ^ (bit(c) << (nu - 1 - t))
    U = gates.circuit_matrix(nu, lambda s: gates.apply_cnot(s, c, t))
    assert np.allclose(U, np.eye(2 ** nu)[perm].T)
    U = gates.circuit_matrix(nu, lambda s: gates.apply_controlled_phase(s, c, t, 3))
    assert np.allclose(U, np.diag(np.exp(2j * np.pi / 8 * (bit(c) & bit(t)))))


def test_swap_exchanges_bits():
    U = gates.circuit_matrix(3, lambda s: gates.apply_swap(s, 0, 2))
    j = np.arange(8)
    swapped = ((j & 1) << 2) | (j & 2) | (j >> 2)
    assert np.allclose(U, np.eye(8)[swapped].T)


@pytest.mark.parametrize("nu", range(1, 9))
def test_qft_equals_dft(nu):
    U = gates.circuit_matrix(nu, gates.qft)
    assert np.abs(U - dense_dft(2 ** nu)).max() < 1e-10


@pytest.mark.parametrize("nu", range(1, 9))
def test_qft_gate_tally(nu):
    s = gates.qft(new_register(nu))
    assert s.tally.n_two == nu * (nu - 1) // 2
    assert s.tally.n_single == nu
    assert s.tally.n_swap == nu // 2


def test_qft_on_subregister_is_kron():
    U = gates.circuit_matrix(4, lambda s: gates.qft(s, [2, 3]))
    assert np.allclose(U, np.kron(np.eye(4), dense_dft(4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_inverse_qft_roundtrip(nu, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal(2 ** nu) + 1j * r.standard_normal(2 ** nu)
    s = StateVector(a / np.linalg.norm(a))
    gates.inverse_qft(gates.qft(s))
    assert np.allclose(s.amp, a / np.linalg.norm(a), atol=1e-12)


def test_uniform_superposition():
    s = gates.uniform_superposition(new_register(4))
    assert np.allclose(s.amp, 0.25)


def test_diagonal_phase_callable_and_table():
    s = StateVector(np.full(4, 0.5))
    gates.apply_diagonal_phase(s, lambda j: 0.1 * j)
    assert np.allclose(s.amp, 0.5 * np.exp(0.1j * np.arange(4)))
    with pytest.raises(NumericError, match="j=2"):
        gates.apply_diagonal_phase(s, [0.0, 0.0, np.nan, 0.0])


def test_invalid_qubits():
    s = new_register(2)
    with pytest.raises(ConfigurationError):
        gates.apply_hadamard(s, 2)
    with pytest.raises(ConfigurationError):
        gates.apply_cnot(s, 1, 1)
