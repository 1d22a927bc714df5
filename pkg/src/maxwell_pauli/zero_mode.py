"""Zero modes of sigma.(p + A), the critical-charge functional and the scaling slope."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .energy import coulomb_kernel, field_energy, scale_state
from .pauli import SIGMA, current, dirac, n_electrons
from .spectral import SpectralGrid, dealias, leray_project, norm

log = logging.getLogger(__name__)


@dataclass
class ZeroModeCandidate:
    psi: np.ndarray
    A: np.ndarray
    grid: SpectralGrid
    residual: float

    def __post_init__(self):
        if not np.isfinite(self.residual):
            raise ValueError("zero-mode residual is not finite")


def zero_mode_residual(psi: np.ndarray, A: np.ndarray, grid: SpectralGrid) -> float:
    """||sigma.(p + A) psi|| / ||psi|| for a one-electron spinor."""
    if n_electrons(psi) != 1:
        raise ValueError("zero modes are one-electron spinors")
    nrm = norm(psi, grid)
    if nrm == 0:
        raise ValueError("psi vanishes")
    return norm(dirac(psi, A, grid), grid) / nrm


def _radial_g(r: np.ndarray) -> np.ndarray:
    """g(r) = 3 (r - arctan r) / r^3, with its series near 0."""
    small = r < 1e-2
    rs = np.where(small, 1.0, r)
    val = 3 * (rs - np.arctan(rs)) / rs**3
    return np.where(small, 1 - 0.6 * r**2 + 3 / 7 * r**4 - r**6 / 3, val)


def _radial_dg_over_r(r: np.ndarray) -> np.ndarray:
    small = r < 1e-2
    rs = np.where(small, 1.0, r)
    dg = 3 * (1 / (rs * (1 + rs**2)) - 3 * (rs - np.arctan(rs)) / rs**4)
    return np.where(small, -1.2 + 12 / 7 * r**2 - 2 * r**4, dg / rs)


def loss_yau_at(X: np.ndarray, spin=(1.0, 0.0), coulomb_gauge: bool = True):
    """Closed-form zero mode at points ``X`` of shape (3, ...), centred at the origin.

    psi = (1 + x^2)^(-3/2) (1 + i sigma.x) phi0 and
    A = -3 (1 + x^2)^(-2) [(1 - x^2) w + 2 (w.x) x + 2 w x x], w = <phi0, sigma phi0>.
    This A is not divergence-free; with ``coulomb_gauge`` the pair is moved
    to Coulomb gauge by the phase chi = (w.x) g(|x|), g(r) = 3 (r - arctan r) / r^3,
    which solves Laplacian chi = div A.
    """
    X = np.asarray(X, float)
    phi0 = np.asarray(spin, complex)
    phi0 = phi0 / np.sqrt(np.sum(np.abs(phi0) ** 2))
    w = np.real(np.einsum("i,aij,j->a", phi0.conj(), SIGMA, phi0))
    W = w.reshape((3,) + (1,) * (X.ndim - 1))
    P0 = phi0.reshape((2,) + (1,) * (X.ndim - 1))
    r2 = np.sum(X**2, axis=0)
    sx = np.einsum("a...,aij->ij...", X, SIGMA)
    psi = (np.einsum("j,ij...->i...", phi0, 1j * sx) + P0) * (1 + r2) ** -1.5
    wx = np.einsum("a,a...->...", w, X)
    A = -3 * (1 + r2) ** -2 * ((1 - r2) * W + 2 * wx * X + 2 * np.cross(W, X, axis=0))
    if coulomb_gauge:
        r = np.sqrt(r2)
        g = _radial_g(r)
        psi = np.exp(1j * wx * g) * psi
        A = A - (g * W + wx * _radial_dg_over_r(r) * X)
    return psi, A


def loss_yau_fields(grid: SpectralGrid, spin=(1.0, 0.0), scale: float = 1.0, coulomb_gauge: bool = True):
    """The closed-form pair centred in the box with lengths measured in units of ``scale``."""
    psi, A = loss_yau_at((grid.coords() - grid.L / 2) / scale, spin, coulomb_gauge)
    return psi, A / scale


def loss_yau_pair(
    grid: SpectralGrid,
    spin=(1.0, 0.0),
    scale: float = 1.0,
    coulomb_gauge: bool = True,
    threshold: float = 1e-3,
) -> ZeroModeCandidate:
    """Sampled closed-form zero mode: A Leray-projected, psi normalized.

    A residual above ``threshold`` is logged, not raised.
    """
    if grid.L < 16 * scale:
        log.warning("box L = %g is small for the algebraic tails (L >= 16 recommended)", grid.L)
    psi, A = loss_yau_fields(grid, spin, scale, coulomb_gauge)
    A = leray_project(A, grid)
    psi = psi / norm(psi, grid)
    res = zero_mode_residual(psi, A, grid)
    if res > threshold:
        log.warning("closed-form zero mode residual %.3e exceeds %.1e on n = %d, L = %g", res, threshold, grid.n, grid.L)
    return ZeroModeCandidate(psi, A, grid, res)


@dataclass
class DescentResult:
    candidate: ZeroModeCandidate
    history: list[float]
    accepted: int
    rejected: int


def variational_zero_mode(
    initial: ZeroModeCandidate,
    iterations: int = 100,
    learning_rate: float = 1e-2,
    freeze_A: bool = False,
    tol: float = 1e-14,
) -> DescentResult:
    """Gradient descent on r(psi, A)^2 with psi renormalized and A re-projected.

    A trial step that does not lower the residual is rejected and the
    learning rate halved, so the accepted history is non-increasing.
    """
    grid = initial.grid
    psi = initial.psi / norm(initial.psi, grid)
    A = initial.A.copy()
    r = zero_mode_residual(psi, A, grid)
    history = [r]
    lr = learning_rate
    accepted = rejected = 0
    for _ in range(iterations):
        if r <= tol:
            break
        chi = dirac(psi, A, grid)
        g_psi = 2 * (dirac(chi, A, grid) - r**2 * psi)
        g_A = None if freeze_A else dealias(leray_project(-2 * current(psi, A, grid), grid), grid)
        if not np.all(np.isfinite(g_psi)) or (g_A is not None and not np.all(np.isfinite(g_A))):
            raise FloatingPointError(f"non-finite gradient after {accepted} accepted steps (residual {r:.3e})")
        trial_psi = psi - lr * g_psi
        trial_psi = trial_psi / norm(trial_psi, grid)
        trial_A = A if g_A is None else A - lr * g_A
        r_new = zero_mode_residual(trial_psi, trial_A, grid)
        if r_new < r:
            psi, A, r = trial_psi, trial_A, r_new
            history.append(r)
            accepted += 1
        else:
            lr *= 0.5
            rejected += 1
    return DescentResult(ZeroModeCandidate(psi, A, grid, r), history, accepted, rejected)


def _centre_kernel(grid: SpectralGrid) -> np.ndarray:
    return coulomb_kernel(grid, center=(grid.L / 2,) * 3)


def inverse_distance_expectation(psi: np.ndarray, grid: SpectralGrid) -> float:
    """<psi, |x - c|^-1 psi> with the periodic zero-mean kernel centred at the box centre c."""
    dens = np.sum(np.abs(psi) ** 2, axis=0)
    return float(np.sum(np.ascontiguousarray(dens * _centre_kernel(grid))) * grid.dV)


def zc_functional(psi: np.ndarray, A: np.ndarray, alpha: float, grid: SpectralGrid) -> float:
    """F[A, 0] / <psi, |x|^-1 psi>: an upper-bound sample of the critical charge.

    A vanishing field gives 0 whatever the denominator; otherwise a
    denominator below 1e-12 of the kernel's peak is rejected.
    """
    psi = psi / norm(psi, grid)
    num = field_energy(A, np.zeros_like(A), alpha, grid)
    if num == 0.0:
        return 0.0
    den = inverse_distance_expectation(psi, grid)
    if not abs(den) > 1e-12 * np.max(np.abs(_centre_kernel(grid))):
        raise ValueError(f"<psi, |x|^-1 psi> = {den:.3e} vanishes")
    return num / den


def one_body_energy_slope(candidate: ZeroModeCandidate, Z: float, alpha: float) -> float:
    """d/dlam E[psi_lam, A_lam] at lam = 1 for a zero mode: F[A, 0] - Z <psi, |x|^-1 psi>."""
    g = candidate.grid
    psi = candidate.psi / norm(candidate.psi, g)
    return field_energy(candidate.A, np.zeros_like(candidate.A), alpha, g) - Z * inverse_distance_expectation(psi, g)


def scaled_energy(candidate: ZeroModeCandidate, Z: float, alpha: float, lam: float) -> float:
    """T + V + F of the one-body problem along the scaling family (nucleus at the box centre)."""
    g = candidate.grid
    psi = candidate.psi / norm(candidate.psi, g)
    psi_l, A_l, g_l = scale_state(psi, candidate.A, g, lam)
    T = norm(dirac(psi_l, A_l, g_l), g_l) ** 2
    V = -Z * inverse_distance_expectation(psi_l, g_l)
    return T + V + field_energy(A_l, np.zeros_like(A_l), alpha, g_l)

