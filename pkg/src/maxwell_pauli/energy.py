"""Coulomb potential, energy functionals, scaling family and gauge phase."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .pauli import dirac, n_electrons, on_slot
from .spectral import (
    SpectralGrid,
    curl,
    dealias,
    grad,
    inverse,
    lambda_eps_inv,
    norm,
)

STABILITY_ALPHA_MAX = 0.06
STABILITY_ALPHA2Z_MAX = 0.041


@dataclass(frozen=True, eq=False)
class NuclearConfig:
    """Static nuclei: positions (K, 3) in box coordinates and charges (K,)."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    charges: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        R = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        Z = np.asarray(self.charges, dtype=float).reshape(-1)
        if len(R) != len(Z):
            raise ValueError(f"{len(R)} positions but {len(Z)} charges")
        if np.any(Z < 0) or not np.all(np.isfinite(Z)):
            raise ValueError("atomic numbers must be finite and nonnegative")
        for i in range(len(R)):
            for j in range(i):
                if np.array_equal(R[i], R[j]):
                    raise ValueError(f"nuclei {j} and {i} coincide at {R[i].tolist()}")
        object.__setattr__(self, "positions", R)
        object.__setattr__(self, "charges", Z)

    @property
    def K(self) -> int:
        return len(self.charges)

    @property
    def max_charge(self) -> float:
        return float(self.charges.max()) if self.K else 0.0

    def scaled(self, lam: float) -> "NuclearConfig":
        return NuclearConfig(self.positions / lam, self.charges)


def kernel_symbol(grid: SpectralGrid, softening: float = 0.0) -> np.ndarray:
    """Fourier symbol of the periodic Coulomb kernel, 4 pi / |k|^2.

    k = 0 is dropped (zero mean) and so are the Nyquist planes, which keeps
    shifted kernels real for off-grid centres.
    """
    m = grid.m
    k = grid.k
    nyq = m == -grid.n // 2
    kx, ky, kz = np.meshgrid(k, k, k, indexing="ij")
    k2 = kx**2 + ky**2 + kz**2
    drop = (k2 == 0) | nyq[:, None, None] | nyq[None, :, None] | nyq[None, None, :]
    sym = np.where(drop, 0.0, 4 * np.pi / np.where(k2 > 0, k2, 1.0))
    if softening > 0:
        sym = sym * np.exp(-(softening**2) * k2 / 4)
    return sym / grid.L**3


def coulomb_kernel(grid: SpectralGrid, center=(0.0, 0.0, 0.0), softening: float = 0.0) -> np.ndarray:
    """Periodic 1/|x - center| sampled on the grid."""
    K = np.stack(np.meshgrid(grid.k, grid.k, grid.k, indexing="ij"))
    phase = np.exp(-1j * np.tensordot(np.asarray(center, float), K, axes=1))
    return inverse(kernel_symbol(grid, softening) * phase).real


def minimum_image_distance(a, b, L: float) -> float:
    d = np.asarray(a, float) - np.asarray(b, float)
    d -= L * np.round(d / L)
    return float(np.sqrt(np.sum(d**2)))


@dataclass(frozen=True, eq=False)
class CoulombPotential:
    """Total Coulomb potential for ``n_electrons`` electrons.

    ``external`` is the electron-nucleus attraction on the 3-D grid,
    ``pair`` the electron-electron kernel on the two-electron grid (N = 2
    only) and ``repulsion`` the nucleus-nucleus constant.
    """

    grid: SpectralGrid
    external: np.ndarray
    repulsion: float
    n_electrons: int = 1
    pair: np.ndarray | None = None
    softening: float = 0.0

    def multiplier(self) -> np.ndarray:
        return self._multiplier

    @cached_property
    def _multiplier(self) -> np.ndarray:
        N = self.n_electrons
        V = sum(on_slot(self.external, N, j, spin_axes=0) for j in range(N))
        if self.pair is not None:
            V = V + self.pair
        return V + self.repulsion

    def apply(self, phi: np.ndarray) -> np.ndarray:
        N = n_electrons(phi)
        return dealias(self.multiplier() * phi, self.grid, slots=N)

    def energy(self, phi: np.ndarray) -> float:
        N = n_electrons(phi)
        dens = np.sum(np.abs(phi) ** 2, axis=tuple(range(N)))
        return float(np.sum(np.ascontiguousarray(dens * self.multiplier())) * self.grid.dV**N)


def _pair_kernel(grid: SpectralGrid, softening: float) -> np.ndarray:
    G = coulomb_kernel(grid, softening=softening)
    i = np.arange(grid.n)
    d = (i[:, None] - i[None, :]) % grid.n
    return G[
        d[:, None, None, :, None, None],
        d[None, :, None, None, :, None],
        d[None, None, :, None, None, :],
    ]


def build_potential(
    grid: SpectralGrid, nuclei: NuclearConfig, softening: float = 0.0, n_electrons: int = 1
) -> CoulombPotential:
    """Assemble the periodic Coulomb potential for the given nuclei."""
    external = np.zeros(grid.shape)
    for R, Z in zip(nuclei.positions, nuclei.charges):
        external -= Z * coulomb_kernel(grid, R, softening)
    repulsion = 0.0
    for i in range(nuclei.K):
        for j in range(i):
            d = minimum_image_distance(nuclei.positions[i], nuclei.positions[j], grid.L)
            repulsion += nuclei.charges[i] * nuclei.charges[j] / d
    pair = _pair_kernel(grid, softening) if n_electrons == 2 else None
    return CoulombPotential(grid, external, float(repulsion), n_electrons, pair, softening)


def coulomb_energy(phi: np.ndarray, potential: CoulombPotential) -> float:
    return potential.energy(phi)


def kinetic_energy(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid) -> float:
    """sum_j ||sigma_j . (p_j + A_j) phi||^2."""
    N = n_electrons(phi)
    return sum(norm(dirac(phi, A, grid, j), grid, N) ** 2 for j in range(N))


def field_energy(A: np.ndarray, Adot: np.ndarray, alpha: float, grid: SpectralGrid) -> float:
    """(1/8 pi) (alpha^-2 ||curl A||^2 + 4 ||dA/dt||^2)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return (norm(curl(A, grid), grid) ** 2 / alpha**2 + 4 * norm(Adot, grid) ** 2) / (8 * np.pi)


def field_energy_gradient_form(A: np.ndarray, Adot: np.ndarray, alpha: float, grid: SpectralGrid) -> float:
    """Same as :func:`field_energy` but with ||grad A|| in place of ||curl A||."""
    gA = np.concatenate([grad(A[a], grid) for a in range(3)])
    return (norm(gA, grid) ** 2 / alpha**2 + 4 * norm(Adot, grid) ** 2) / (8 * np.pi)


@dataclass(frozen=True)
class EnergyReport:
    kinetic: float
    coulomb: float
    field: float
    total: float
    charge: float


def total_energy(
    phi: np.ndarray,
    A: np.ndarray,
    Adot: np.ndarray,
    potential: CoulombPotential,
    alpha: float,
    eps: float,
    grid: SpectralGrid,
) -> EnergyReport:
    """T[phi, A~] + V[phi] + F[A, dA/dt] ||phi||^2 with A~ = Lambda_eps^-1 A."""
    N = n_electrons(phi)
    At = lambda_eps_inv(A, eps, grid)
    T = kinetic_energy(phi, At, grid)
    V = potential.energy(phi)
    F = field_energy(A, Adot, alpha, grid)
    charge = norm(phi, grid, N) ** 2
    return EnergyReport(T, V, F, T + V + F * charge, charge)


def apply_hamiltonian(
    phi: np.ndarray,
    A: np.ndarray,
    Adot: np.ndarray,
    potential: CoulombPotential,
    alpha: float,
    eps: float,
    grid: SpectralGrid,
) -> np.ndarray:
    """sum_j T_j(A~) phi + V phi + F phi; F enters unweighted."""
    N = n_electrons(phi)
    At = lambda_eps_inv(A, eps, grid)
    out = potential.apply(phi) + field_energy(A, Adot, alpha, grid) * phi
    for j in range(N):
        out = out + dirac(dirac(phi, At, grid, j), At, grid, j)
    return out


def scale_state(phi: np.ndarray, A: np.ndarray, grid: SpectralGrid, lam: float, Adot: np.ndarray | None = None):
    """phi -> lam^(3N/2) phi(lam x), A -> lam A(lam x) on the box of side L/lam.

    Samples are kept and the box is shrunk, so the rescaling is exact.
    ``Adot`` (if given) scales as lam^2 Adot(lam x), matching time ~ lam^-2.
    """
    if lam <= 0:
        raise ValueError("scale factor must be positive")
    N = n_electrons(phi)
    new_grid = grid.with_length(grid.L / lam)
    out = (lam ** (1.5 * N) * phi, lam * A, new_grid)
    if Adot is not None:
        out = out + (lam**2 * Adot,)
    return out


def coulomb_bound_gap(T: float, VF: float) -> float:
    """inf over lam > 0 of lam^2 T + lam VF."""
    if T <= 0:
        raise ValueError("kinetic energy must be positive")
    return -(VF**2) / (4 * T) if VF < 0 else 0.0


def gauge_transform(phi: np.ndarray, times, field_history) -> np.ndarray:
    """Multiply by exp(i int_0^t F ds), trapezoid rule on the sampled history."""
    times = np.asarray(times, float)
    F = np.asarray(field_history, float)
    if len(times) < 2:
        return phi.copy()
    theta = cumulative_trapezoid(F, times)[-1]
    return phi * np.exp(1j * theta)


@dataclass(frozen=True)
class StabilityReport:
    passed: bool
    exempt: bool
    alpha: float
    max_charge: float
    alpha2_max_charge: float
    message: str


def validate_stability_hypothesis(alpha: float, nuclei: NuclearConfig, n_electrons: int = 1) -> StabilityReport:
    """Check alpha <= 0.06 and alpha^2 max Z <= 0.041; N = 1, K = 0 is exempt."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    zmax = nuclei.max_charge
    a2z = alpha**2 * zmax
    if n_electrons == 1 and nuclei.K == 0:
        return StabilityReport(True, True, alpha, zmax, a2z, "N = 1, K = 0: no restriction on alpha")
    ok_alpha = alpha <= STABILITY_ALPHA_MAX
    ok_z = a2z <= STABILITY_ALPHA2Z_MAX
    parts = [
        f"alpha = {alpha:g} {'<=' if ok_alpha else '>'} {STABILITY_ALPHA_MAX}",
        f"alpha^2 max Z = {a2z:.6g} {'<=' if ok_z else '>'} {STABILITY_ALPHA2Z_MAX}",
    ]
    if n_electrons == 1 and nuclei.K == 1:
        parts.append("N = K = 1: stability only needs Z below the critical charge")
    return StabilityReport(ok_alpha and ok_z, False, alpha, zmax, a2z, "; ".join(parts))
