"""Periodic-box spectral calculus.

Fields are stored as samples on a uniform grid over the torus [0, L)^3.
Transforms use the "forward" normalization (the forward transform carries
1/n per axis), so a unit-amplitude plane wave has a single Fourier
coefficient equal to one.

Arrays with several electron coordinates carry ``slots`` trailing blocks of
three spatial axes; every multiplier below acts on all of them at once.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

__all__ = [
    "SpectralGrid",
    "make_grid",
    "fft_workers",
    "forward",
    "inverse",
    "dealias",
    "heat_propagate",
    "wave_multipliers",
    "wave_propagate",
    "leray_project",
    "lambda_eps_inv",
    "sobolev_norm",
    "grad",
    "div",
    "curl",
    "laplacian",
    "inner",
    "norm",
    "random_field",
    "random_solenoidal",
]


def fft_workers() -> int:
    """Thread count for transforms, capped by the ``MP_THREADS`` variable."""
    raw = os.environ.get("MP_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """Uniform periodic grid with ``n`` points per axis on a box of side ``L``.

    ``m`` holds the integer mode numbers in FFT order, ``k`` the wavenumber
    lattice 2*pi*m/L. Derivatives use ``kd``, the same lattice with the
    Nyquist mode set to zero so that odd derivatives map real fields to real
    fields and every operator shares one consistent symbol.
    """

    L: float
    n: int
    dealias: bool = True
    m: np.ndarray = field(init=False, repr=False)
    k: np.ndarray = field(init=False, repr=False)
    kd: np.ndarray = field(init=False, repr=False)
    K: np.ndarray = field(init=False, repr=False)
    k2: np.ndarray = field(init=False, repr=False)
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 4 or self.n % 2:
            raise ValueError(f"points per axis must be an even integer >= 4, got {self.n!r}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"box length must be positive, got {self.L!r}")
        n = int(self.n)
        m = np.fft.fftfreq(n, 1.0 / n).round().astype(int)
        k = 2 * np.pi * m / self.L
        kd = np.where(m == -n // 2, 0.0, k)
        K = np.stack(np.meshgrid(kd, kd, kd, indexing="ij"))
        keep = np.abs(m) <= n / 3
        mask = keep[:, None, None] & keep[None, :, None] & keep[None, None, :]
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "kd", kd)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "k2", np.sum(K**2, axis=0))
        object.__setattr__(self, "mask", mask)

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def dV(self) -> float:
        return self.dx**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def x(self) -> np.ndarray:
        """1-D sample positions along each axis."""
        return np.arange(self.n) * self.dx

    def coords(self) -> np.ndarray:
        """Sample positions as a (3, n, n, n) array."""
        return np.stack(np.meshgrid(self.x, self.x, self.x, indexing="ij"))

    def same_as(self, other: "SpectralGrid") -> bool:
        return self.n == other.n and self.L == other.L

    def with_length(self, L: float) -> "SpectralGrid":
        return SpectralGrid(L, self.n, self.dealias)


def make_grid(L: float, n: int, dealias: bool = True) -> SpectralGrid:
    return SpectralGrid(L, n, dealias)


def _axes(slots: int) -> tuple[int, ...]:
    return tuple(range(-3 * slots, 0))


def forward(f: np.ndarray, slots: int = 1) -> np.ndarray:
    return sfft.fftn(f, axes=_axes(slots), norm="forward", workers=fft_workers())


def inverse(fh: np.ndarray, slots: int = 1) -> np.ndarray:
    return sfft.ifftn(fh, axes=_axes(slots), norm="forward", workers=fft_workers())


def _slot_symbol(sym: np.ndarray, slots: int, i: int) -> np.ndarray:
    """Broadcast a 3-D symbol onto slot ``i`` of a ``slots``-slot array."""
    shape = [1] * (3 * slots)
    shape[3 * i : 3 * i + 3] = sym.shape
    return sym.reshape(shape)


def _k2_total(grid: SpectralGrid, slots: int) -> np.ndarray:
    if slots == 1:
        return grid.k2
    return sum(_slot_symbol(grid.k2, slots, i) for i in range(slots))


def _mask_total(grid: SpectralGrid, slots: int) -> np.ndarray:
    if slots == 1:
        return grid.mask
    out = _slot_symbol(grid.mask, slots, 0)
    for i in range(1, slots):
        out = out & _slot_symbol(grid.mask, slots, i)
    return out


def _real_like(out: np.ndarray, f: np.ndarray) -> np.ndarray:
    return out.real if np.isrealobj(f) else out


def dealias(f: np.ndarray, grid: SpectralGrid, slots: int = 1, axes_slot: int | None = None) -> np.ndarray:
    """Apply the 2/3-rule mask; a no-op when the grid has dealiasing off.

    With ``axes_slot`` set, only that coordinate block is filtered (products
    that vary in a single electron's coordinates create no new modes
    elsewhere).
    """
    if not grid.dealias:
        return f
    if axes_slot is None:
        fh = forward(f, slots) * _mask_total(grid, slots)
        return _real_like(inverse(fh, slots), f)
    axes = tuple(range(-3 * slots + 3 * axes_slot, -3 * slots + 3 * axes_slot + 3))
    fh = sfft.fftn(f, axes=axes, norm="forward", workers=fft_workers())
    fh = fh * _slot_symbol(grid.mask, slots, axes_slot)
    out = sfft.ifftn(fh, axes=axes, norm="forward", workers=fft_workers())
    return _real_like(out, f)


def heat_propagate(f: np.ndarray, z: complex, grid: SpectralGrid, slots: int = 1) -> np.ndarray:
    """Multiply every Fourier mode by exp(-z |k|^2)."""
    if np.real(z) < 0:
        raise ValueError("heat_propagate needs Re z >= 0 (backward heat flow is ill-posed)")
    if z == 0:
        return f.copy()
    return inverse(forward(f, slots) * np.exp(-z * _k2_total(grid, slots)), slots)


def wave_multipliers(t: float, alpha: float, grid: SpectralGrid):
    """Symbols (cos(wt), sin(wt)/w, -w sin(wt)) with w = |k| / (2 alpha).

    The field obeys (2 alpha)^2 A_tt = Laplacian A, so the light speed in
    these units is 1/(2 alpha). The k = 0 value of sin(wt)/w is its limit t.
    """
    w = np.sqrt(grid.k2) / (2.0 * alpha)
    c = np.cos(w * t)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(w > 0, np.sin(w * t) / np.where(w > 0, w, 1.0), t)
    ds = -w * np.sin(w * t)
    return c, s, ds


def wave_propagate(A: np.ndarray, Adot: np.ndarray, t: float, alpha: float, grid: SpectralGrid):
    """Free evolution of (A, dA/dt) over time ``t``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    c, s, ds = wave_multipliers(t, alpha, grid)
    Ah, Adh = forward(A), forward(Adot)
    At = inverse(c * Ah + s * Adh)
    Adt = inverse(ds * Ah + c * Adh)
    return _real_like(At, A), _real_like(Adt, Adot)


def leray_project(v: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Remove the longitudinal part of a (3, n, n, n) field; k = 0 passes through."""
    vh = forward(v)
    K = grid.K
    k2 = np.where(grid.k2 > 0, grid.k2, 1.0)
    kv = np.sum(K * vh, axis=0)
    vh = vh - K * (kv / k2)
    return _real_like(inverse(vh), v)


def lambda_eps_inv(f: np.ndarray, eps: float, grid: SpectralGrid, slots: int = 1) -> np.ndarray:
    """Apply (1 - eps Laplacian)^(-1/2)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return f.copy()
    sym = 1.0 / np.sqrt(1.0 + eps * _k2_total(grid, slots))
    return _real_like(inverse(forward(f, slots) * sym, slots), f)


def sobolev_norm(f: np.ndarray, m: float, grid: SpectralGrid, slots: int = 1) -> float:
    """Discrete H^m norm ||(1 - Laplacian)^(m/2) f||_2; leading axes are components."""
    fh = forward(f, slots)
    if m != 0:
        fh = fh * (1.0 + _k2_total(grid, slots)) ** (m / 2)
    return float(np.sqrt(np.sum(np.abs(fh) ** 2) * grid.L ** (3 * slots)))


def grad(f: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    fh = forward(f)
    return _real_like(inverse(1j * grid.K * fh), f)


def div(v: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    vh = forward(v)
    return _real_like(inverse(1j * np.sum(grid.K * vh, axis=0)), v)


def curl(v: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    vh = forward(v)
    K = grid.K
    ch = 1j * np.stack(
        [
            K[1] * vh[2] - K[2] * vh[1],
            K[2] * vh[0] - K[0] * vh[2],
            K[0] * vh[1] - K[1] * vh[0],
        ]
    )
    return _real_like(inverse(ch), v)


def laplacian(f: np.ndarray, grid: SpectralGrid, slots: int = 1) -> np.ndarray:
    return _real_like(inverse(-_k2_total(grid, slots) * forward(f, slots), slots), f)


def inner(f: np.ndarray, g: np.ndarray, grid: SpectralGrid, slots: int = 1) -> complex:
    """L^2 inner product, conjugate-linear in ``f``.

    numpy's pairwise summation on a contiguous buffer has a fixed reduction
    order, so the result does not depend on thread count.
    """
    prod = np.ascontiguousarray(np.conj(f) * g)
    return complex(np.sum(prod) * grid.dV**slots)


def norm(f: np.ndarray, grid: SpectralGrid, slots: int = 1) -> float:
    sq = np.ascontiguousarray(np.abs(f) ** 2)
    return float(np.sqrt(np.sum(sq) * grid.dV**slots))


def _band_mask(grid: SpectralGrid, band: int, slots: int) -> np.ndarray:
    keep = np.abs(grid.m) <= band
    cube = keep[:, None, None] & keep[None, :, None] & keep[None, None, :]
    if slots == 1:
        return cube
    out = _slot_symbol(cube, slots, 0)
    for i in range(1, slots):
        out = out & _slot_symbol(cube, slots, i)
    return out


def random_field(
    grid: SpectralGrid,
    rng: np.random.Generator,
    lead: tuple[int, ...] = (),
    band: int | None = None,
    slots: int = 1,
    real: bool = False,
) -> np.ndarray:
    """Random smooth field whose modes satisfy |m| <= band on every axis.

    ``band`` defaults to n // 6, which keeps cubic products alias-free and
    inside the 2/3-rule band.
    """
    if band is None:
        band = grid.n // 6
    shape = lead + (grid.n,) * (3 * slots)
    f = rng.standard_normal(shape)
    if not real:
        f = f + 1j * rng.standard_normal(shape)
    fh = forward(f, slots) * _band_mask(grid, band, slots)
    out = inverse(fh, slots)
    return out.real.copy() if real else out


def random_solenoidal(grid: SpectralGrid, rng: np.random.Generator, band: int | None = None) -> np.ndarray:
    """Random real divergence-free vector field with limited bandwidth."""
    return leray_project(random_field(grid, rng, (3,), band=band, real=True), grid)
