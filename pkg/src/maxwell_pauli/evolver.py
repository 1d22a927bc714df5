"""Time stepping for the eps-modified Maxwell-Pauli system.

One step over [t, t + h] applies the Duhamel map

    phi(t+h) = S(h) phi(t) + h S(h/2) N[phi_m, A_m, Adot_m]
    A(t+h)   = W(h) (A, Adot)(t) + h (s(h/2), cos(h/2)) 2 pi Lambda^-1 P J[phi_m, A~_m]

with S(t) = exp((i + eps) t Laplacian) and W the free wave flow. The
subscript m marks the midpoint node: the step-start state carried forward
by the free flow over h/2 averaged with the candidate step end carried
back over h/2. The map is iterated (Picard) until the candidate stops
moving. Its fixed point is second order and, for eps = 0, conserves the
charge exactly because the node average is taken in the interaction
picture.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import (
    CoulombPotential,
    NuclearConfig,
    build_potential,
    field_energy,
    kinetic_energy,
)
from .pauli import antisymmetry_residual, current, dirac, n_electrons, slot_laplacian, total_current
from .spectral import (
    SpectralGrid,
    _k2_total,
    dealias,
    forward,
    grad,
    inner,
    inverse,
    lambda_eps_inv,
    leray_project,
    norm,
    sobolev_norm,
    wave_multipliers,
)

log = logging.getLogger(__name__)

LEDGER_COLUMNS = (
    "t",
    "charge",
    "T",
    "V",
    "F",
    "E",
    "var_H",
    "diss_integral",
    "picard_iters",
    "contraction_ratio",
)


class StepFailure(RuntimeError):
    """Raised when the Picard map fails to contract even after step halving."""

    def __init__(self, message: str, t: float, h: float, stage: str = "picard_step"):
        super().__init__(message)
        self.t = t
        self.h = h
        self.stage = stage


@dataclass
class SystemState:
    phi: np.ndarray
    A: np.ndarray
    Adot: np.ndarray
    grid: SpectralGrid
    alpha: float
    eps: float = 0.0
    t: float = 0.0
    nuclei: NuclearConfig = field(default_factory=NuclearConfig)
    softening: float = 0.0
    coupled: bool = True

    @property
    def n_electrons(self) -> int:
        return n_electrons(self.phi)

    def copy(self) -> "SystemState":
        return replace(self, phi=self.phi.copy(), A=self.A.copy(), Adot=self.Adot.copy())


def make_state(
    phi: np.ndarray,
    A: np.ndarray | None,
    Adot: np.ndarray | None,
    grid: SpectralGrid,
    alpha: float,
    eps: float = 0.0,
    nuclei: NuclearConfig | None = None,
    softening: float = 0.0,
    t: float = 0.0,
    antisymmetric: bool | None = None,
    coupled: bool = True,
) -> SystemState:
    """Build a valid state: fields are Leray-projected and band-limited.

    Two-electron wavefunctions are antisymmetrized unless
    ``antisymmetric=False``. With ``coupled=False`` the current does not
    feed back into the field, which then evolves freely.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    N = n_electrons(phi)
    zeros = np.zeros((3,) + grid.shape)
    A = zeros if A is None else np.asarray(A, float)
    Adot = zeros.copy() if Adot is None else np.asarray(Adot, float)
    phi = dealias(np.asarray(phi, complex), grid, slots=N)
    if N == 2 and antisymmetric is not False:
        from .pauli import antisymmetrize

        phi = antisymmetrize(phi)
    A = dealias(leray_project(A, grid), grid)
    Adot = dealias(leray_project(Adot, grid), grid)
    return SystemState(
        phi, A, Adot, grid, float(alpha), float(eps), float(t), nuclei or NuclearConfig(), softening, coupled
    )


@dataclass(frozen=True)
class StepConfig:
    h: float = 1e-3
    tol: float = 1e-10
    max_iter: int = 25
    max_halvings: int = 8

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step size must be positive")
        if not self.tol > 0:
            raise ValueError("Picard tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("need at least one Picard iteration")


@dataclass
class StepStats:
    h: float
    iterations: int
    ratio: float
    distances: list[float]
    halvings: int = 0


@dataclass
class Diagnostics:
    charge: float
    T: float
    V: float
    F: float
    E: float
    var_H: float


class Dynamics:
    """Operators of the eps-modified system for fixed grid, nuclei and couplings."""

    def __init__(
        self,
        grid: SpectralGrid,
        alpha: float,
        eps: float,
        potential: CoulombPotential,
        n_electrons: int,
        coupled: bool = True,
    ):
        if eps < 0:
            raise ValueError("eps must be nonnegative (the semigroup needs Re >= 0)")
        self.grid = grid
        self.alpha = alpha
        self.eps = eps
        self.potential = potential
        self.N = n_electrons
        self.coupled = coupled
        self._cache: dict[float, tuple] = {}

    @classmethod
    def for_state(cls, state: SystemState) -> "Dynamics":
        pot = build_potential(state.grid, state.nuclei, state.softening, state.n_electrons)
        return cls(state.grid, state.alpha, state.eps, pot, state.n_electrons, state.coupled)

    def _symbols(self, h: float):
        if h not in self._cache:
            z = (1j + self.eps)
            k2 = _k2_total(self.grid, self.N)
            Sh = np.exp(-z * h * k2)
            Sm = np.exp(-z * 0.5 * h * k2)
            wave = wave_multipliers(h, self.alpha, self.grid)
            wave_m = wave_multipliers(0.5 * h, self.alpha, self.grid)
            # backward transport over h/2; the growth cap only matters for absurd h
            Sm_inv = np.exp(np.minimum(self.eps * 0.5 * h * k2, 600.0) + 1j * 0.5 * h * k2)
            self._cache[h] = (Sh, Sm, Sm_inv, wave, wave_m)
        return self._cache[h]

    def regularized(self, A: np.ndarray) -> np.ndarray:
        return lambda_eps_inv(A, self.eps, self.grid)

    def coupling(self, phi: np.ndarray, At: np.ndarray, chis=None) -> np.ndarray:
        """sum_j L_j(A~) phi, assembled as T_j(A~) phi + Laplacian_j phi."""
        if chis is None:
            chis = [dirac(phi, At, self.grid, j) for j in range(self.N)]
        out = np.zeros(phi.shape, dtype=complex)
        for j, chi in enumerate(chis):
            out += dirac(chi, At, self.grid, j) + slot_laplacian(phi, self.grid, j)
        return out

    def energy(self, phi: np.ndarray, A: np.ndarray, Adot: np.ndarray, At: np.ndarray | None = None, chis=None):
        At = self.regularized(A) if At is None else At
        if chis is None:
            T = kinetic_energy(phi, At, self.grid)
        else:
            T = sum(norm(c, self.grid, self.N) ** 2 for c in chis)
        V = self.potential.energy(phi)
        F = field_energy(A, Adot, self.alpha, self.grid)
        charge = norm(phi, self.grid, self.N) ** 2
        return T, V, F, charge, T + V + F * charge

    def node_terms(self, phi, A, Adot):
        """Nonlinearity of the phi equation and the field source at one quadrature node.

        phi part: eps phi E - (i + eps)(L(A~) phi + V phi + F phi);
        field part: 2 pi Lambda^-1 P J[phi, A~] in Fourier space.
        """
        At = self.regularized(A)
        chis = [dirac(phi, At, self.grid, j) for j in range(self.N)]
        T, V, F, charge, E = self.energy(phi, A, Adot, At, chis)
        rhs = self.coupling(phi, At, chis) + self.potential.apply(phi) + F * phi
        nonlin = self.eps * E * phi - (1j + self.eps) * rhs
        if not self.coupled:
            return nonlin, np.zeros((3,) + self.grid.shape, dtype=complex)
        J = sum(current(phi, At, self.grid, j, chi) for j, chi in enumerate(chis))
        src = 2 * np.pi * forward(lambda_eps_inv(leray_project(J, self.grid), self.eps, self.grid))
        return nonlin, src

    def phi_nonlinearity(self, phi, A, Adot):
        return self.node_terms(phi, A, Adot)[0]

    def field_source(self, phi, A):
        if not self.coupled:
            return np.zeros((3,) + self.grid.shape, dtype=complex)
        At = self.regularized(A)
        J = total_current(phi, At, self.grid)
        return 2 * np.pi * forward(lambda_eps_inv(leray_project(J, self.grid), self.eps, self.grid))

    def hamiltonian(self, phi, A, Adot, chis=None):
        At = self.regularized(A)
        if chis is None:
            chis = [dirac(phi, At, self.grid, j) for j in range(self.N)]
        out = self.potential.apply(phi) + field_energy(A, Adot, self.alpha, self.grid) * phi
        for j, chi in enumerate(chis):
            out = out + dirac(chi, At, self.grid, j)
        return out

    def diagnostics(self, phi, A, Adot) -> Diagnostics:
        At = self.regularized(A)
        chis = [dirac(phi, At, self.grid, j) for j in range(self.N)]
        T, V, F, charge, E = self.energy(phi, A, Adot, At, chis)
        Hphi = self.hamiltonian(phi, A, Adot, chis)
        expect = inner(phi, Hphi, self.grid, self.N).real
        var = norm(Hphi, self.grid, self.N) ** 2 - expect**2
        return Diagnostics(charge, T, V, F, E, var)

    def free_phi(self, phi, h):
        Sh = self._symbols(h)[0]
        return inverse(forward(phi, self.N) * Sh, self.N)

    def duhamel_phi(self, phi0, nonlin, h):
        Sh, Sm = self._symbols(h)[:2]
        N = self.N
        return inverse(forward(phi0, N) * Sh + h * Sm * forward(nonlin, N), N)

    def duhamel_field(self, A0, Adot0, source_hat, h):
        (c, s, ds), (cm, sm, _) = self._symbols(h)[3:]
        Ah, Adh = forward(A0), forward(Adot0)
        A1 = inverse(c * Ah + s * Adh + h * sm * source_hat).real
        Ad1 = inverse(ds * Ah + c * Adh + h * cm * source_hat).real
        return A1, Ad1

    def midpoint(self, start: SystemState, cand, h):
        """Node values at t + h/2 from the two endpoints moved by the free flows."""
        phi_c, A_c, Ad_c = cand
        N = self.N
        _, Sm, Sm_inv, _, (c, s, ds) = self._symbols(h)
        phi_m = 0.5 * inverse(forward(start.phi, N) * Sm + forward(phi_c, N) * Sm_inv, N)
        A0h, Ad0h = forward(start.A), forward(start.Adot)
        A1h, Ad1h = forward(A_c), forward(Ad_c)
        A_m = 0.5 * inverse(c * A0h + s * Ad0h + c * A1h - s * Ad1h).real
        Ad_m = 0.5 * inverse(ds * A0h + c * Ad0h - ds * A1h + c * Ad1h).real
        return phi_m, A_m, Ad_m

    def psi_map(self, start: SystemState, cand, h):
        """One application of the Duhamel map to the candidate step end."""
        nonlin, src = self.node_terms(*self.midpoint(start, cand, h))
        phi1 = self.duhamel_phi(start.phi, nonlin, h)
        A1, Ad1 = self.duhamel_field(start.A, start.Adot, src, h)
        return phi1, A1, Ad1

    def predictor(self, start: SystemState, h):
        """Free flow plus the nonlinearity frozen at the step start."""
        nl, src = self.node_terms(start.phi, start.A, start.Adot)
        phi1 = self.duhamel_phi(start.phi, nl, h)
        A1, Ad1 = self.duhamel_field(start.A, start.Adot, src, h)
        return phi1, A1, Ad1

    def distance(self, a, b) -> float:
        """max(||dphi||_{1,2}, ||dA||_{1,2}, ||dAdot||_2)."""
        return max(
            sobolev_norm(a[0] - b[0], 1, self.grid, self.N),
            sobolev_norm(a[1] - b[1], 1, self.grid),
            sobolev_norm(a[2] - b[2], 0, self.grid),
        )

    def scale(self, state: SystemState) -> float:
        return 1.0 + max(
            sobolev_norm(state.phi, 1, self.grid, self.N),
            sobolev_norm(state.A, 1, self.grid),
            norm(state.Adot, self.grid),
        )


def duhamel_phi_step(state: SystemState, candidate, config: StepConfig, dynamics: Dynamics | None = None):
    """phi part of one Duhamel update with the nonlinearity taken from ``candidate``."""
    if state.eps < 0:
        raise ValueError("eps must be nonnegative")
    dyn = dynamics or Dynamics.for_state(state)
    nl = dyn.phi_nonlinearity(*dyn.midpoint(state, candidate, config.h))
    return dyn.duhamel_phi(state.phi, nl, config.h)


def duhamel_A_step(state: SystemState, candidate, config: StepConfig, dynamics: Dynamics | None = None):
    """(A, Adot) part of one Duhamel update driven by the candidate's current."""
    dyn = dynamics or Dynamics.for_state(state)
    phi_m, A_m, _ = dyn.midpoint(state, candidate, config.h)
    src = dyn.field_source(phi_m, A_m)
    return dyn.duhamel_field(state.A, state.Adot, src, config.h)


def _noise_floor(scale: float) -> float:
    return 1e-13 * scale


def _try_step(dyn: Dynamics, state: SystemState, h: float, config: StepConfig):
    with np.errstate(over="ignore", invalid="ignore"):
        return _picard_iterate(dyn, state, h, config)


def _picard_iterate(dyn: Dynamics, state: SystemState, h: float, config: StepConfig):
    scale = dyn.scale(state)
    cand = dyn.predictor(state, h)
    distances: list[float] = []
    ratio = 0.0
    for it in range(1, config.max_iter + 1):
        new = dyn.psi_map(state, cand, h)
        if not all(np.all(np.isfinite(x)) for x in new):
            return None, StepStats(h, it, math.inf, distances)
        d = dyn.distance(new, cand)
        distances.append(d)
        cand = new
        if len(distances) >= 2 and distances[-2] > _noise_floor(scale):
            ratio = d / distances[-2]
            if ratio >= 1.0:
                return None, StepStats(h, it, ratio, distances)
        if d <= config.tol * scale:
            return cand, StepStats(h, it, ratio, distances)
    return None, StepStats(h, config.max_iter, ratio, distances)


def picard_step(state: SystemState, config: StepConfig, dynamics: Dynamics | None = None):
    """Advance one step by Picard iteration of the Duhamel map.

    Returns the new state and the iteration statistics. If the map fails to
    contract the step is halved, up to ``config.max_halvings`` times; the
    returned ``stats.h`` is the step actually taken.
    """
    dyn = dynamics or Dynamics.for_state(state)
    h = config.h
    last = None
    for halvings in range(config.max_halvings + 1):
        result, stats = _try_step(dyn, state, h, config)
        stats.halvings = halvings
        if result is not None:
            phi, A, Adot = result
            return replace(state, phi=phi, A=A, Adot=Adot, t=state.t + h), stats
        log.info("Picard map did not contract at t=%.6g, h=%.3g (ratio %.3g); halving", state.t, h, stats.ratio)
        last = stats
        h *= 0.5
    raise StepFailure(
        f"Picard iteration failed to contract at t={state.t:.6g} after {config.max_halvings} halvings "
        f"(last h={2 * h:.3g}, last ratio={last.ratio:.3g}, distances={last.distances[-3:]})",
        t=state.t,
        h=2 * h,
    )


@dataclass
class EnergyLedger:
    """Per-step record of the conserved and dissipated quantities."""

    eps: float
    rows: list[tuple] = field(default_factory=list)

    def append(self, t: float, diag: Diagnostics, iters: int, ratio: float):
        if self.rows:
            t0, *_ = self.rows[-1]
            prev_var = self.rows[-1][6]
            prev_int = self.rows[-1][7]
            integral = prev_int + self.eps * (t - t0) * (prev_var + diag.var_H)
        else:
            integral = 0.0
        self.rows.append((t, diag.charge, diag.T, diag.V, diag.F, diag.E, diag.var_H, integral, iters, ratio))

    def column(self, name: str) -> np.ndarray:
        i = LEDGER_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)


@dataclass
class RunResult:
    snapshots: list[SystemState]
    ledger: EnergyLedger
    final: SystemState
    completed: bool
    failure: StepFailure | None = None
    antisymmetry: list[float] = field(default_factory=list)


def run(
    initial: SystemState,
    t_final: float,
    config: StepConfig,
    snapshot_every: int = 0,
    on_row=None,
    track_antisymmetry: bool = False,
) -> RunResult:
    """Integrate from ``initial.t`` to ``t_final``.

    Step failures end the run early; the result carries the failure and the
    ledger up to that point. ``on_row`` is called with each ledger row as
    soon as it is produced.
    """
    dyn = Dynamics.for_state(initial)
    state = initial.copy()
    ledger = EnergyLedger(initial.eps)
    snaps = [state.copy()] if snapshot_every else []
    anti = []

    def record(st, iters, ratio):
        ledger.append(st.t, dyn.diagnostics(st.phi, st.A, st.Adot), iters, ratio)
        if on_row is not None:
            on_row(ledger.rows[-1])
        if track_antisymmetry:
            anti.append(antisymmetry_residual(st.phi))

    record(state, 0, 0.0)
    h = config.h
    step = 0
    failure = None
    while state.t < t_final - 1e-12 * max(1.0, abs(t_final)):
        h_try = min(h, t_final - state.t)
        try:
            state, stats = picard_step(state, replace(config, h=h_try), dyn)
        except StepFailure as exc:
            failure = exc
            break
        if stats.halvings:
            h = stats.h
        if not all(np.all(np.isfinite(x)) for x in (state.phi, state.A, state.Adot)):
            failure = StepFailure(f"non-finite field at t={state.t:.6g}", state.t, stats.h, stage="nan_guard")
            break
        step += 1
        record(state, stats.iterations, stats.ratio)
        if snapshot_every and step % snapshot_every == 0:
            snaps.append(state.copy())
    return RunResult(snaps, ledger, state, failure is None, failure, anti)


@dataclass
class AuditReport:
    energy_defect: float
    charge_deviation: float
    monotonicity_violations: int
    max_increase: float
    E0: float
    eps: float

    def passed(self, energy_tol: float, charge_tol: float) -> bool:
        return (
            self.energy_defect <= energy_tol
            and self.charge_deviation <= charge_tol
            and self.monotonicity_violations == 0
        )


def dissipation_audit(ledger: EnergyLedger, eps: float | None = None, slack: float = 1e-10) -> AuditReport:
    """Check E(t) + 2 eps int Var_H = E(0), the charge law and monotone energy."""
    eps = ledger.eps if eps is None else eps
    E = ledger.column("E")
    t = ledger.column("t")
    var = ledger.column("var_H")
    if eps != ledger.eps:
        integral = np.concatenate([[0.0], np.cumsum(eps * np.diff(t) * (var[1:] + var[:-1]))])
    else:
        integral = ledger.column("diss_integral")
    defect = float(np.max(np.abs(E + integral - E[0]))) if len(E) else 0.0
    charge = np.sqrt(ledger.column("charge"))
    dE = np.diff(E)
    violations = int(np.sum(dE > slack)) if eps > 0 else 0
    return AuditReport(
        energy_defect=defect,
        charge_deviation=float(np.max(np.abs(charge - 1.0))) if len(charge) else 0.0,
        monotonicity_violations=violations,
        max_increase=float(dE.max()) if len(dE) else 0.0,
        E0=float(E[0]) if len(E) else 0.0,
        eps=eps,
    )


def state_distance(a: SystemState, b: SystemState) -> float:
    N = a.n_electrons
    return max(
        sobolev_norm(a.phi - b.phi, 1, a.grid, N),
        sobolev_norm(a.A - b.A, 1, a.grid),
        norm(a.Adot - b.Adot, a.grid),
    )


def uniform_bounds(snapshots: list[SystemState]) -> dict[str, float]:
    """Suprema over a trajectory of ||grad phi||, F and ||A||/(1+t)."""
    grad_phi = field_val = a_growth = 0.0
    for s in snapshots:
        N = s.n_electrons
        if N == 1:
            g = np.concatenate([grad(s.phi[i], s.grid) for i in range(2)])
            gn = norm(g, s.grid)
        else:
            k2 = _k2_total(s.grid, N)
            gn = math.sqrt(np.sum(np.abs(forward(s.phi, N)) ** 2 * k2) * s.grid.L ** (3 * N))
        grad_phi = max(grad_phi, gn)
        field_val = max(field_val, field_energy(s.A, s.Adot, s.alpha, s.grid))
        a_growth = max(a_growth, norm(s.A, s.grid) / (1 + s.t))
    return {"grad_phi": grad_phi, "F": field_val, "A_over_1pt": a_growth}


@dataclass
class ContinuationResult:
    eps: list[float]
    distances: list[float]
    bounds: list[dict[str, float] | None]
    failures: list[str | None]

    @property
    def complete(self) -> bool:
        return all(f is None for f in self.failures)


def epsilon_continuation(
    initial: SystemState,
    eps_list,
    t_final: float,
    config: StepConfig,
    sample_every: int = 1,
    max_workers: int = 1,
    member_configs: list[StepConfig] | None = None,
) -> ContinuationResult:
    """Run the same initial data for each eps and measure consecutive distances.

    ``distances[n]`` is the supremum over common sample times of the metric
    between the members eps_list[n] and eps_list[n+1]; it is NaN when either
    member failed. ``member_configs`` overrides the stepping per member.
    """
    eps_list = [float(e) for e in eps_list]
    configs = member_configs or [config] * len(eps_list)
    if len(configs) != len(eps_list):
        raise ValueError("one step configuration per member is required")

    def member(args):
        eps, cfg = args
        st = initial.copy()
        st.eps = eps
        return run(st, t_final, cfg, snapshot_every=sample_every)

    jobs = list(zip(eps_list, configs))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            results = list(pool.map(member, jobs))
    else:
        results = [member(j) for j in jobs]

    failures = [None if r.completed else str(r.failure) for r in results]
    bounds = [uniform_bounds(r.snapshots) if r.snapshots else None for r in results]
    distances = []
    for a, b in zip(results, results[1:]):
        if not (a.completed and b.completed):
            distances.append(float("nan"))
            continue
        tb = {round(s.t, 12): s for s in b.snapshots}
        d = 0.0
        for s in a.snapshots:
            other = tb.get(round(s.t, 12))
            if other is not None:
                d = max(d, state_distance(s, other))
        distances.append(d)
    return ContinuationResult(eps_list, distances, bounds, failures)


def find_contraction_threshold(
    state: SystemState,
    config: StepConfig,
    target: float = 0.5,
    h_start: float = 1e-3,
    h_max: float = 100.0,
    steps: int = 3,
    iterations: int = 30,
) -> tuple[float, float]:
    """Largest h whose measured contraction ratio stays <= target.

    The ratio at a given h is the largest d_2/d_1 over ``steps``
    consecutive steps from ``state`` (infinite if a step does not
    converge). The bracket grows from ``h_start`` by doubling until the
    ratio exceeds ``target``, then log-h bisection narrows it. Returns
    (h*, ratio at h*); h* = h_max if no violation was found below it.
    """
    dyn = Dynamics.for_state(state)
    cfg = replace(config, max_iter=max(config.max_iter, 4))

    def worst_ratio(h):
        st = state.copy()
        worst = 0.0
        for _ in range(steps):
            result, stats = _try_step(dyn, st, h, replace(cfg, h=h))
            d = stats.distances
            if len(d) >= 2 and d[0] > _noise_floor(dyn.scale(st)):
                worst = max(worst, d[1] / d[0])
            if result is None:
                return math.inf
            st = replace(st, phi=result[0], A=result[1], Adot=result[2], t=st.t + h)
        return worst

    lo, r_lo = h_start, worst_ratio(h_start)
    if r_lo > target:
        raise StepFailure(f"contraction ratio {r_lo:.3g} > {target} already at h={h_start:g}", state.t, h_start)
    hi = lo
    while True:
        hi = min(2 * hi, h_max)
        r = worst_ratio(hi)
        if r > target:
            break
        lo, r_lo = hi, r
        if hi >= h_max:
            return lo, r_lo
    a, b = math.log(lo), math.log(hi)
    for _ in range(iterations):
        mid = 0.5 * (a + b)
        r = worst_ratio(math.exp(mid))
        if r <= target:
            a, r_lo = mid, r
        else:
            b = mid
    return math.exp(a), r_lo
