import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxwell_pauli.pauli import (
    SIGMA,
    antisymmetrize,
    antisymmetry_residual,
    apply_L,
    apply_pauli,
    apply_sigma,
    convective_current,
    current,
    dirac,
    exchange,
    n_electrons,
    pauli_expanded,
    pauli_identity_residual,
    sigma_dot,
    spin_current_identity_residual,
    spin_density,
    total_current,
)
from maxwell_pauli.spectral import curl, make_grid, norm, random_field, random_solenoidal

seeds = st.integers(0, 2**32 - 1)


def test_pauli_matrices_algebra():
    eye = np.eye(2)
    for a in range(3):
        for b in range(3):
            prod = SIGMA[a] @ SIGMA[b]
            expect = (a == b) * eye + 1j * sum(
                np.sign(np.linalg.det(np.eye(3)[[a, b, c]])) * SIGMA[c] for c in range(3) if c not in (a, b)
            ) * (a != b)
            assert np.allclose(prod, expect)


def test_shape_validation():
    with pytest.raises(ValueError):
        n_electrons(np.zeros((3, 4, 4, 4)))
    with pytest.raises(ValueError):
        n_electrons(np.zeros((2, 4, 4)))
    g = make_grid(1.0, 4)
    phi = np.zeros((2, 4, 4, 4), complex)
    with pytest.raises(IndexError):
        dirac(phi, np.zeros((3, 4, 4, 4)), g, j=1)
    with pytest.raises(ValueError):
        dirac(phi, np.zeros((3, 8, 8, 8)), g)
    with pytest.raises(ValueError):
        apply_sigma(3, phi)


@pytest.mark.parametrize("j", [0, 1])
def test_spin_algebra_matches_matrix_contraction(j):
    rng = np.random.default_rng(j)
    phi = rng.standard_normal((2, 2, 3, 3, 3, 3, 3, 3)) + 1j * rng.standard_normal((2, 2, 3, 3, 3, 3, 3, 3))
    v = rng.standard_normal((3, 3, 3, 3))
    for a in range(3):
        expect = np.moveaxis(np.tensordot(SIGMA[a], phi, axes=([1], [j])), 0, j)
        assert np.allclose(apply_sigma(a, phi, j), expect)
    M = np.einsum("axyz,aij->ijxyz", v, SIGMA)
    if j == 0:
        expect = np.einsum("ijxyz,jkxyzuvw->ikxyzuvw", M, phi)
    else:
        expect = np.einsum("jkuvw,ikxyzuvw->ijxyzuvw", M, phi)
    assert np.allclose(sigma_dot(v, phi, j), expect)


def test_dirac_on_plane_wave():
    g = make_grid(2 * np.pi, 8)
    k = np.array([1.0, 2.0, -1.0])
    chi = np.array([0.6, 0.8j])
    phi = chi[:, None, None, None] * np.exp(1j * np.tensordot(k, g.coords(), axes=1))
    out = dirac(phi, np.zeros((3,) + g.shape), g)
    expect = np.einsum("ij,j...->i...", np.tensordot(k, SIGMA, axes=1), phi)
    assert np.allclose(out, expect, atol=1e-13)


def _battery(N, n, count, seed):
    g = make_grid(2 * np.pi, n)
    rng = np.random.default_rng(seed)
    for _ in range(count):
        phi = random_field(g, rng, lead=(2,) * N, slots=N)
        A = random_solenoidal(g, rng)
        yield g, phi, A


@given(seeds)
def test_pauli_identity_one_electron(seed):
    for g, phi, A in _battery(1, 16, 2, seed):
        assert pauli_identity_residual(phi, A, g) <= 1e-12


@given(seeds)
def test_pauli_identity_two_electrons(seed):
    for g, phi, A in _battery(2, 8, 1, seed):
        for j in (0, 1):
            assert pauli_identity_residual(phi, A, g, j) <= 1e-12


def test_composed_and_expanded_forms_agree():
    (g, phi, A), = _battery(1, 12, 1, 5)
    assert norm(apply_pauli(phi, A, g) - pauli_expanded(phi, A, g), g) <= 1e-12 * norm(apply_pauli(phi, A, g), g)


def test_L_vanishes_without_field():
    (g, phi, _), = _battery(1, 8, 1, 0)
    assert np.allclose(apply_L(phi, np.zeros((3,) + g.shape), g), 0)


@given(seeds)
def test_spin_current_decomposition(seed):
    for N, n in ((1, 16), (2, 8)):
        for g, phi, A in _battery(N, n, 1, seed):
            for j in range(N):
                assert spin_current_identity_residual(phi, A, g, j) <= 1e-12


def test_spin_current_minus_sign_does_not_hold():
    """With the spin term subtracted instead of added the decomposition fails."""
    (g, phi, A), = _battery(1, 16, 1, 11)
    lhs = -current(phi, A, g)
    wrong = convective_current(phi, A, g) - 0.5 * curl(spin_density(phi, g), g)
    assert norm(lhs - wrong, g) / norm(phi, g) ** 2 > 1e-3


def test_real_spin_polarized_state_carries_pure_spin_current():
    g = make_grid(8.0, 16)
    env = random_field(g, np.random.default_rng(8), real=True)
    phi = np.stack([env, np.zeros_like(env)]).astype(complex)
    A = np.zeros((3,) + g.shape)
    J = current(phi, A, g)
    expect = -0.5 * curl(spin_density(phi, g), g)
    assert norm(J - expect, g) <= 1e-12 * norm(expect, g)
    assert norm(convective_current(phi, A, g), g) <= 1e-14


def test_plane_wave_current():
    g = make_grid(2 * np.pi, 8)
    k = np.array([1.0, 0.0, 2.0])
    phi = np.array([1.0, 0.0])[:, None, None, None] * np.exp(1j * np.tensordot(k, g.coords(), axes=1))
    J = current(phi, np.zeros((3,) + g.shape), g)
    assert np.allclose(J, -k[:, None, None, None], atol=1e-13)


def test_spin_density_brute_force_two_electrons():
    """Oracle: explicit sums over both spins and the second electron's grid."""
    g = make_grid(2.0, 4)
    phi = random_field(g, np.random.default_rng(6), lead=(2, 2), slots=2, band=2)
    s = spin_density(phi, make_grid(2.0, 4, dealias=False), j=1)
    expect = np.zeros((3,) + g.shape)
    for a in range(3):
        for idx in np.ndindex(*g.shape):
            total = 0.0
            for jdx in np.ndindex(*g.shape):
                for s1 in range(2):
                    v = phi[(s1, slice(None)) + jdx + idx]
                    total += (np.conj(v) @ SIGMA[a] @ v).real
            expect[(a,) + idx] = total * g.dV
    assert np.allclose(s, expect, atol=1e-13)


def test_exchange_and_antisymmetrization():
    g = make_grid(2.0, 4)
    phi = random_field(g, np.random.default_rng(1), lead=(2, 2), slots=2)
    assert np.array_equal(exchange(exchange(phi)), phi)
    anti = antisymmetrize(phi)
    assert antisymmetry_residual(anti) <= 1e-15
    assert antisymmetry_residual(phi) > 0.1
    with pytest.raises(ValueError):
        antisymmetrize(phi[0, :, 0, 0, 0])
    with pytest.raises(ValueError):
        exchange(np.zeros((2, 4, 4, 4)))


def test_antisymmetric_state_has_identical_electron_currents():
    g = make_grid(2 * np.pi, 8)
    rng = np.random.default_rng(2)
    phi = antisymmetrize(random_field(g, rng, lead=(2, 2), slots=2))
    A = random_solenoidal(g, rng)
    J1 = current(phi, A, g, 0)
    assert norm(J1 - current(phi, A, g, 1), g) <= 1e-13 * norm(J1, g)
    assert norm(total_current(phi, A, g) - 2 * J1, g) <= 1e-12 * norm(J1, g)
