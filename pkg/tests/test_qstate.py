import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapse_lab.errors import DimensionMismatch, NonHermitianLeak, ZeroVector
from collapse_lab.qstate import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    BasisKind,
    QuantumState,
    bloch_decompose,
    density_from_pure,
    expectation,
    expm_hermitian,
    fidelity_pure,
    gellmann_basis,
    is_hermitian,
    normalize,
    purity,
    random_hermitian,
    random_state,
    trace_distance,
)


def test_state_is_read_only():
    s = QuantumState([1, 0])
    with pytest.raises(ValueError):
        s.amplitudes[0] = 2


def test_state_needs_two_entries():
    with pytest.raises(DimensionMismatch):
        QuantumState([1.0])
    with pytest.raises(DimensionMismatch):
        QuantumState(np.eye(2))


def test_position_state_requires_grid():
    with pytest.raises(ValueError):
        QuantumState(np.ones(64), BasisKind.POSITION_GRID)


def test_normalize():
    s = normalize([3, 4j])
    assert s.is_normalized()
    assert np.allclose(s.populations, [0.36, 0.64])
    with pytest.raises(ZeroVector):
        normalize([0, 0])


def test_basis_state():
    e = QuantumState.basis(3, 2)
    assert np.array_equal(e.amplitudes, [0, 0, 1])


@pytest.mark.parametrize("n", [2, 3, 4, 7])
def test_gellmann_orthonormal_traceless(n):
    g = gellmann_basis(n).generators
    assert g.shape == (n * n - 1, n, n)
    gram = np.einsum("aij,bji->ab", g, g)
    assert np.allclose(gram, 2 * np.eye(n * n - 1), atol=1e-13)
    assert np.allclose(np.einsum("aii->a", g), 0)
    assert all(is_hermitian(m) for m in g)


def test_gellmann_qubit_is_pauli():
    g = gellmann_basis(2).generators
    assert np.array_equal(g[0], SIGMA_X)
    assert np.array_equal(g[1], SIGMA_Y)
    assert np.array_equal(g[2], SIGMA_Z)


def test_gellmann_qutrit_diagonals():
    g = gellmann_basis(3)
    assert g.labels[-2:] == ("d1", "d2")
    assert np.allclose(np.diag(g[-1]).real, np.array([1, 1, -2]) / np.sqrt(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_bloch_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(n, rng)
    v = bloch_decompose(h)
    assert np.allclose(v.reconstruct(gellmann_basis(n)), h, atol=1e-10)


def test_bloch_of_plus_state():
    v = bloch_decompose(density_from_pure(np.array([1, 1]) / np.sqrt(2)))
    # ρ = (1 + σx)/2 → λ0 = 1/2 and component 1/2 on σx
    assert v.identity_coefficient == pytest.approx(0.5)
    assert np.allclose(v.components, [0.5, 0, 0])


def test_bloch_dimension_check():
    with pytest.raises(DimensionMismatch):
        bloch_decompose(np.eye(3), gellmann_basis(2))


def test_expm_hermitian_matches_series():
    rng = np.random.default_rng(0)
    h = random_hermitian(4, rng)
    t = 0.01
    u = expm_hermitian(h, t)
    series = np.eye(4) - 1j * h * t - (h @ h) * t**2 / 2 + 1j * (h @ h @ h) * t**3 / 6
    assert np.allclose(u, series, atol=1e-8)
    assert np.allclose(u @ u.conj().T, np.eye(4), atol=1e-13)


def test_expectation_rejects_non_hermitian():
    with pytest.raises(NonHermitianLeak):
        expectation(np.array([[0, 1], [0, 0]]), np.array([1, 1j]) / np.sqrt(2))
    assert expectation(SIGMA_Z, [1, 0]) == 1.0


def test_distances():
    rng = np.random.default_rng(1)
    a, b = random_state(3, rng), random_state(3, rng)
    ra, rb = density_from_pure(a), density_from_pure(b)
    # pure states: trace distance = sqrt(1 - F)
    assert trace_distance(ra, rb) == pytest.approx(np.sqrt(1 - fidelity_pure(a, b)), abs=1e-12)
    assert purity(ra) == pytest.approx(1.0)
    assert purity(np.eye(3) / 3) == pytest.approx(1 / 3)
