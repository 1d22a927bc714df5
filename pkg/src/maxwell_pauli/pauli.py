"""Spinor algebra for one or two electrons.

A spinor for ``N`` electrons is a complex array of shape
``(2,)*N + (n,)*(3*N)``: first the spin index of every electron, then the
three spatial axes of electron 0, then those of electron 1. Electron
indices are zero-based throughout.

Every pointwise product is followed by the grid's 2/3-rule mask over the
coordinates in which the product varies.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .spectral import SpectralGrid, curl, dealias, fft_workers, norm

SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


def n_electrons(phi: np.ndarray) -> int:
    N, rem = divmod(phi.ndim, 4)
    if rem or N not in (1, 2) or phi.shape[:N] != (2,) * N:
        raise ValueError(f"not a spinor array: shape {phi.shape}")
    return N


def _check_slot(N: int, j: int):
    if not 0 <= j < N:
        raise IndexError(f"electron index {j} out of range for N = {N}")


def _check_grid(phi: np.ndarray, grid: SpectralGrid, A: np.ndarray | None = None):
    if phi.shape[-1] != grid.n or (A is not None and A.shape != (3,) + grid.shape):
        raise ValueError("field does not live on this grid")


def on_slot(f: np.ndarray, N: int, j: int, spin_axes: int | None = None) -> np.ndarray:
    """Reshape a 3-D field so it broadcasts over electron ``j``'s coordinates."""
    spin_axes = N if spin_axes is None else spin_axes
    shape = [1] * (spin_axes + 3 * N)
    shape[spin_axes + 3 * j : spin_axes + 3 * j + 3] = f.shape[-3:]
    return f.reshape(shape)


def slot_axes(N: int, j: int) -> tuple[int, int, int]:
    start = N + 3 * j
    return (start, start + 1, start + 2)


def _spin_slices(N: int, j: int):
    lead = (slice(None),) * j
    return lead + (0,), lead + (1,)


def apply_sigma(a: int, phi: np.ndarray, j: int = 0) -> np.ndarray:
    """Apply the single Pauli matrix sigma^a to electron ``j``'s spin."""
    if a not in (0, 1, 2):
        raise ValueError(f"Pauli index must be 0, 1 or 2, got {a}")
    up, dn = _spin_slices(phi.ndim // 4, j)
    out = np.empty(phi.shape, dtype=complex)
    if a == 0:
        out[up], out[dn] = phi[dn], phi[up]
    elif a == 1:
        out[up], out[dn] = -1j * phi[dn], 1j * phi[up]
    else:
        out[up], out[dn] = phi[up], -phi[dn]
    return out


def sigma_dot(v, phi: np.ndarray, j: int = 0) -> np.ndarray:
    """sum_a v^a sigma^a on electron ``j``; ``v`` is a 3-vector or a (3, n, n, n) field."""
    N = n_electrons(phi)
    _check_slot(N, j)
    v = np.asarray(v)
    if v.ndim == 1:
        vx, vy, vz = v
    else:
        vx, vy, vz = (on_slot(v[a], N, j, spin_axes=N - 1) for a in range(3))
    up, dn = _spin_slices(N, j)
    pu, pd = phi[up], phi[dn]
    out = np.empty(phi.shape, dtype=complex)
    out[up] = vz * pu + (vx - 1j * vy) * pd
    out[dn] = (vx + 1j * vy) * pu - vz * pd
    return out


def slot_gradient(phi: np.ndarray, grid: SpectralGrid, j: int = 0) -> list[np.ndarray]:
    """Spectral derivatives of ``phi`` along electron ``j``'s three axes."""
    N = n_electrons(phi)
    axes = slot_axes(N, j)
    w = fft_workers()
    ph = sfft.fftn(phi, axes=axes, norm="forward", workers=w)
    out = []
    for a in range(3):
        sym = on_slot(1j * grid.K[a], N, j)
        out.append(sfft.ifftn(sym * ph, axes=axes, norm="forward", workers=w))
    return out


def slot_laplacian(phi: np.ndarray, grid: SpectralGrid, j: int = 0) -> np.ndarray:
    N = n_electrons(phi)
    axes = slot_axes(N, j)
    w = fft_workers()
    ph = sfft.fftn(phi, axes=axes, norm="forward", workers=w)
    return sfft.ifftn(-on_slot(grid.k2, N, j) * ph, axes=axes, norm="forward", workers=w)


def _product(f: np.ndarray, grid: SpectralGrid, N: int, j: int) -> np.ndarray:
    return dealias(f, grid, slots=N, axes_slot=j)


def dirac(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, j: int = 0) -> np.ndarray:
    """sigma_j . (p_j + A_j) phi with p = -i grad.

    Assembled in Fourier space: sigma.k phi^ plus the masked transform of
    sigma.A phi, then one inverse transform.
    """
    N = n_electrons(phi)
    _check_slot(N, j)
    _check_grid(phi, grid, A)
    axes = slot_axes(N, j)
    w = fft_workers()
    ph = sfft.fftn(phi, axes=axes, norm="forward", workers=w)
    prod = sfft.fftn(sigma_dot(A, phi, j), axes=axes, norm="forward", workers=w)
    if grid.dealias:
        prod *= on_slot(grid.mask, N, j)
    out = sigma_dot(grid.K, ph, j) + prod
    return sfft.ifftn(out, axes=axes, norm="forward", workers=w)


def apply_pauli(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, j: int = 0) -> np.ndarray:
    """[sigma_j . (p_j + A_j)]^2 phi, composed from two first-order applications."""
    return dirac(dirac(phi, A, grid, j), A, grid, j)


def apply_L(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, j: int = 0) -> np.ndarray:
    """2 A_j . p_j + |A_j|^2 + sigma_j . B_j applied to ``phi`` (B = curl A).

    Relies on div A = 0 for the first term.
    """
    N = n_electrons(phi)
    _check_slot(N, j)
    _check_grid(phi, grid, A)
    dphi = slot_gradient(phi, grid, j)
    Apq = sum(on_slot(A[a], N, j) * (-1j * dphi[a]) for a in range(3))
    A2 = on_slot(np.sum(A**2, axis=0), N, j)
    B = curl(A, grid)
    return (
        _product(2 * Apq, grid, N, j)
        + _product(A2 * phi, grid, N, j)
        + _product(sigma_dot(B, phi, j), grid, N, j)
    )


def pauli_expanded(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, j: int = 0) -> np.ndarray:
    """(p + A)^2 phi + sigma . B phi, the expanded form of the Pauli operator."""
    return -slot_laplacian(phi, grid, j) + apply_L(phi, A, grid, j)


def pauli_identity_residual(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, j: int = 0) -> float:
    N = n_electrons(phi)
    diff = apply_pauli(phi, A, grid, j) - pauli_expanded(phi, A, grid, j)
    return norm(diff, grid, N) / norm(phi, grid, N)


def _contract(f: np.ndarray, grid: SpectralGrid, N: int, j: int) -> np.ndarray:
    """Sum over all spins and the other electron's coordinates, leaving electron j's grid."""
    keep = slot_axes(N, j)
    axes = tuple(ax for ax in range(f.ndim) if ax not in keep)
    out = np.sum(f, axis=axes)
    return out * grid.dV ** (N - 1)


def spin_density(phi: np.ndarray, grid: SpectralGrid, j: int = 0) -> np.ndarray:
    """<psi, sigma psi> for electron j, integrated over the others; (3, n, n, n), real."""
    N = n_electrons(phi)
    s = np.stack([_contract((np.conj(phi) * apply_sigma(a, phi, j)).real, grid, N, j) for a in range(3)])
    return dealias(s, grid)


def current(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, j: int = 0, chi: np.ndarray | None = None) -> np.ndarray:
    """Probability current of electron j: -Re <sigma psi, sigma.(p + A) psi>, integrated.

    ``chi`` may carry a precomputed sigma.(p + A) phi.
    """
    N = n_electrons(phi)
    if chi is None:
        chi = dirac(phi, A, grid, j)
    J = np.stack(
        [-_contract((np.conj(apply_sigma(a, phi, j)) * chi).real, grid, N, j) for a in range(3)]
    )
    return dealias(J, grid)


def total_current(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    N = n_electrons(phi)
    return sum(current(phi, A, grid, j) for j in range(N))


def convective_current(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, j: int = 0) -> np.ndarray:
    """Re <psi, (p + A) psi>, the spin-free part of the current."""
    N = n_electrons(phi)
    dphi = slot_gradient(phi, grid, j)
    comps = []
    for a in range(3):
        pa = -1j * dphi[a] + on_slot(A[a], N, j) * phi
        comps.append(_contract((np.conj(phi) * pa).real, grid, N, j))
    return dealias(np.stack(comps), grid)


def spin_current_identity_residual(
    phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, j: int = 0
) -> float:
    """Mismatch of Re<sigma psi, sigma.(p+A) psi> = Re<psi,(p+A)psi> + curl<psi, sigma psi>/2.

    The spin term enters with a plus sign for sigma^2 = [[0, -i], [i, 0]]
    and p = -i grad; the current carries the overall minus sign.
    """
    N = n_electrons(phi)
    lhs = -current(phi, A, grid, j)
    rhs = convective_current(phi, A, grid, j) + 0.5 * curl(spin_density(phi, grid, j), grid)
    return norm(lhs - rhs, grid) / norm(phi, grid, N) ** 2


def exchange(phi: np.ndarray) -> np.ndarray:
    """Swap (x1, s1) <-> (x2, s2) for a two-electron spinor."""
    if n_electrons(phi) != 2:
        raise ValueError("exchange needs N = 2")
    return np.transpose(phi, (1, 0, 5, 6, 7, 2, 3, 4))


def antisymmetrize(phi: np.ndarray) -> np.ndarray:
    if n_electrons(phi) != 2:
        raise ValueError("antisymmetrize is only defined for N = 2")
    return 0.5 * (phi - exchange(phi))


def antisymmetry_residual(phi: np.ndarray) -> float:
    """||phi + Pi phi|| / ||phi||; zero for fermionic states."""
    num = np.sum(np.abs(phi + exchange(phi)) ** 2)
    return float(np.sqrt(num / np.sum(np.abs(phi) ** 2)))
