"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import logging
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from maxwell_pauli.energy import (
    NuclearConfig,
    build_potential,
    coulomb_bound_gap,
    coulomb_energy,
    field_energy,
    kinetic_energy,
    scale_state,
    validate_stability_hypothesis,
)
from maxwell_pauli.evolver import (
    StepConfig,
    dissipation_audit,
    epsilon_continuation,
    find_contraction_threshold,
    make_state,
    run,
    state_distance,
)
from maxwell_pauli.pauli import (
    pauli_identity_residual,
    spin_current_identity_residual,
)
from maxwell_pauli.spectral import (
    div,
    leray_project,
    make_grid,
    norm,
    random_field,
    random_solenoidal,
)
from maxwell_pauli.zero_mode import (
    loss_yau_pair,
    one_body_energy_slope,
    zc_functional,
)

from _cases import COUPLED_INI, coupled_state, gaussian_spinor, two_electron_state

H = 1e-3
STEPS = 200
T6 = H * STEPS


@pytest.fixture(scope="module")
def coupled_run():
    t0 = time.perf_counter()
    res = run(coupled_state(), T6, StepConfig(h=H))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def battery():
    rng = np.random.default_rng(2024)
    g1, g2 = make_grid(2 * np.pi, 16), make_grid(2 * np.pi, 8)
    one = [(random_field(g1, rng, lead=(2,)), random_solenoidal(g1, rng), g1) for _ in range(20)]
    two = [(random_field(g2, rng, lead=(2, 2), slots=2), random_solenoidal(g2, rng), g2) for _ in range(5)]
    return one, two


def test_criterion_01_pauli_identity(battery, acceptance_report):
    one, two = battery
    t0 = time.perf_counter()
    r1 = max(pauli_identity_residual(phi, A, g) for phi, A, g in one)
    r2 = max(pauli_identity_residual(phi, A, g, j) for phi, A, g in two for j in (0, 1))
    elapsed = time.perf_counter() - t0
    ok = r1 <= 1e-12 and r2 <= 1e-12 and elapsed < 10
    acceptance_report(1, ok, f"max residual N=1 {r1:.2e}, N=2 {r2:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_spin_current_decomposition(battery, acceptance_report):
    one, two = battery
    r1 = max(spin_current_identity_residual(phi, A, g) for phi, A, g in one)
    r2 = max(spin_current_identity_residual(phi, A, g, j) for phi, A, g in two for j in (0, 1))
    ok = r1 <= 1e-12 and r2 <= 1e-12
    acceptance_report(2, ok, f"max residual N=1 {r1:.2e}, N=2 {r2:.2e}")
    assert ok


def test_criterion_03_leray_projection(acceptance_report):
    g = make_grid(7.0, 16)
    rng = np.random.default_rng(3)
    worst_div = worst_idem = 0.0
    for _ in range(20):
        v = rng.standard_normal((3,) + g.shape)
        Pv = leray_project(v, g)
        nv = norm(v, g)
        worst_div = max(worst_div, norm(div(Pv, g), g) / nv)
        worst_idem = max(worst_idem, norm(leray_project(Pv, g) - Pv, g) / nv)
    ok = worst_div <= 1e-12 and worst_idem <= 1e-13
    acceptance_report(3, ok, f"div {worst_div:.2e}, idempotence {worst_idem:.2e}")
    assert ok


def test_criterion_04_free_field_energy(acceptance_report):
    g = make_grid(10.0, 16)
    rng = np.random.default_rng(4)
    st = make_state(np.zeros((2,) + g.shape), random_solenoidal(g, rng), random_solenoidal(g, rng), g, 0.06)
    res = run(st, 1000 * 1e-2, StepConfig(h=1e-2))
    F = res.ledger.column("F")
    drift = np.max(np.abs(F - F[0])) / F[0]
    ok = res.completed and len(F) == 1001 and drift <= 1e-10
    acceptance_report(4, ok, f"relative F drift {drift:.2e} over {len(F) - 1} steps")
    assert ok


def test_criterion_05_unitary_limit(acceptance_report):
    g = make_grid(10.0, 16)
    packet = gaussian_spinor(g, (5.0, 5.0, 5.0), 1.3, momentum=(0.6, 0.0, -0.3))
    st = make_state(packet, None, None, g, 0.06, eps=0.0, coupled=False)
    st.phi /= norm(st.phi, g)
    res = run(st, 500 * 1e-3, StepConfig(h=1e-3))
    dev = np.max(np.abs(np.sqrt(res.ledger.column("charge")) - 1))

    m = np.array([1, -2, 1])
    k = 2 * np.pi * m / g.L
    wave = np.exp(1j * np.tensordot(k, g.coords(), axes=1)) / g.L**1.5
    pw = make_state(np.stack([wave, 0 * wave]), None, None, g, 0.06, eps=0.0, coupled=False)
    pres = run(pw, 0.5, StepConfig(h=1e-3))
    exact = pw.phi * np.exp(-1j * (k @ k) * 0.5)
    phase_err = np.max(np.abs(pres.final.phi - exact)) * g.L**1.5
    ok = res.completed and pres.completed and dev <= 1e-10 and phase_err <= 1e-10
    acceptance_report(5, ok, f"norm deviation {dev:.2e}, plane-wave phase error {phase_err:.2e}")
    assert ok


def test_criterion_06_charge_conservation(coupled_run, acceptance_report):
    res, elapsed = coupled_run
    dev = np.max(np.abs(np.sqrt(res.ledger.column("charge")) - 1))
    ok = res.completed and len(res.ledger) == STEPS + 1 and dev <= 1e-8 and elapsed < 300
    acceptance_report(6, ok, f"max | ||phi|| - 1 | = {dev:.2e}, {STEPS} steps in {elapsed:.1f} s")
    assert ok


def test_criterion_07_dissipation_ledger(coupled_run, acceptance_report):
    res, _ = coupled_run
    ref = run(coupled_state(), T6, StepConfig(h=H / 4))
    a, b = dissipation_audit(res.ledger), dissipation_audit(ref.ledger)
    tol = 1e-6 * max(1.0, abs(a.E0))
    # reference rows at the coarse times
    E_ref = ref.ledger.column("E")[::4]
    gap = np.max(np.abs(res.ledger.column("E") - E_ref))
    ok = (
        ref.completed
        and a.energy_defect <= tol
        and b.energy_defect <= tol
        and gap <= tol
        and a.monotonicity_violations == 0
        and b.monotonicity_violations == 0
    )
    acceptance_report(
        7,
        ok,
        f"defect {a.energy_defect:.2e} (reference {b.energy_defect:.2e}), |E - E_ref| {gap:.2e}, "
        f"tol {tol:.1e}, violations {a.monotonicity_violations}/{b.monotonicity_violations}",
    )
    assert ok


def test_criterion_08_antisymmetry_propagation(acceptance_report):
    st = two_electron_state()
    res = run(st, 100 * 1e-3, StepConfig(h=1e-3), track_antisymmetry=True)
    worst = max(res.antisymmetry)
    ok = res.completed and len(res.antisymmetry) == 101 and worst <= 1e-8
    acceptance_report(8, ok, f"max antisymmetry residual {worst:.2e} over 100 steps")
    assert ok


def test_criterion_09_scaling_identities(acceptance_report):
    g = make_grid(10.0, 16)
    phi = gaussian_spinor(g, (5.6, 5.0, 4.6), 1.2)
    st = make_state(phi, 0.02 * random_solenoidal(g, np.random.default_rng(0)), None, g, 0.06)
    st.phi /= norm(st.phi, g)
    # Z = 2 so that V + F < 0 and the parabola has an interior minimum
    nuc = NuclearConfig([[5.0, 5.0, 5.0]], [2.0])

    def parts(lam):
        psi, A, gl = scale_state(st.phi, st.A, g, lam)
        T = kinetic_energy(psi, A, gl)
        V = coulomb_energy(psi, build_potential(gl, nuc.scaled(lam)))
        F = field_energy(A, np.zeros_like(A), st.alpha, gl)
        return T, V, F

    T, V, F = parts(1.0)
    worst = 0.0
    for lam in (0.5, 2.0, 4.0):
        Tl, Vl, Fl = parts(lam)
        worst = max(worst, abs(Tl / (lam**2 * T) - 1), abs(Vl / (lam * V) - 1), abs(Fl / (lam * F) - 1))
    predicted = coulomb_bound_gap(T, V + F)
    search = minimize_scalar(lambda s: sum(parts(s)), bounds=(1e-3, 50.0), method="bounded",
                             options={"xatol": 1e-10})
    gap = abs(predicted - search.fun)
    ok = worst <= 1e-12 and gap <= 1e-9 and V + F < 0
    acceptance_report(9, ok, f"max scaling error {worst:.2e}; parabola minimum {predicted:.10f} vs search {search.fun:.10f}")
    assert ok


def test_criterion_10_picard_contraction(coupled_run, acceptance_report):
    res, _ = coupled_run
    st = coupled_state()
    h_star, r_star = find_contraction_threshold(st, StepConfig(h=H), target=0.5, iterations=12)
    below = [find_contraction_threshold(st, StepConfig(h=H), h_start=h, h_max=h)[1] for h in (h_star / 2, h_star / 8)]
    run_ratio = float(np.max(res.ledger.column("contraction_ratio")))
    ok = h_star >= H and r_star <= 0.5 and max(below) <= 0.5 and run_ratio <= 0.5
    acceptance_report(
        10, ok, f"h* = {h_star:.4g} (ratio {r_star:.3f}); ratios below h*: {max(below):.3f}; at h = {H:g}: {run_ratio:.2e}"
    )
    assert ok


def test_criterion_11_eps_continuation(acceptance_report):
    t0 = time.perf_counter()
    eps = [0.1 * 2.0**-n for n in range(5)]
    res = epsilon_continuation(coupled_state(), eps, 0.1, StepConfig(h=H))
    elapsed = time.perf_counter() - t0
    D = res.distances
    decreasing = all(b < a for a, b in zip(D, D[1:]))
    spread = {}
    for key in ("grad_phi", "F", "A_over_1pt"):
        vals = np.array([b[key] for b in res.bounds])
        spread[key] = vals.max() / vals.min()
    bounded = all(np.isfinite(v) and v <= 2.0 for v in spread.values())
    ok = res.complete and decreasing and bounded and elapsed < 1800
    acceptance_report(
        11,
        ok,
        "D_n = [" + ", ".join(f"{d:.2e}" for d in D) + "]; bound spread (max/min) "
        + ", ".join(f"{k} {v:.3f}" for k, v in spread.items()) + f"; {elapsed:.0f} s",
    )
    assert ok


def test_criterion_12_stability_hypothesis(acceptance_report):
    at = NuclearConfig([[0.0, 0.0, 0.0]], [11.0])
    above = NuclearConfig([[0.0, 0.0, 0.0]], [12.0])
    p = validate_stability_hypothesis(0.06, at, 1)
    f = validate_stability_hypothesis(0.06, above, 1)
    ok = p.passed and not f.passed and round(p.alpha2_max_charge, 6) == 0.0396 and round(f.alpha2_max_charge, 6) == 0.0432
    acceptance_report(12, ok, f"Z=11: {p.alpha2_max_charge:.4f} pass={p.passed}; Z=12: {f.alpha2_max_charge:.4f} pass={f.passed}")
    assert ok


def test_criterion_13_zero_mode(acceptance_report, caplog):
    caplog.set_level(logging.ERROR)
    alpha = 0.06
    coarse = loss_yau_pair(make_grid(24.0, 24))
    fine_grid = make_grid(24.0, 48)
    fine = loss_yau_pair(fine_grid)
    zc_c = zc_functional(coarse.psi, coarse.A, alpha, coarse.grid)
    zc_f = zc_functional(fine.psi, fine.A, alpha, fine_grid)
    scale_err = 0.0
    for lam in (0.5, 2.0):
        psi, A, gl = scale_state(fine.psi, fine.A, fine_grid, lam)
        scale_err = max(scale_err, abs(zc_functional(psi, A, alpha, gl) / zc_f - 1))
    drift = abs(zc_f / zc_c - 1)
    s_at = one_body_energy_slope(fine, zc_f, alpha)
    s_lo = one_body_energy_slope(fine, zc_f * (1 - 1e-9), alpha)
    s_hi = one_body_energy_slope(fine, zc_f * (1 + 1e-9), alpha)
    F = field_energy(fine.A, np.zeros_like(fine.A), alpha, fine_grid)
    flips = s_lo > 0 > s_hi and abs(s_at) <= 1e-12 * F
    checks = {
        "residual<=1e-3": fine.residual <= 1e-3,
        "residual decreasing": fine.residual < coarse.residual,
        "zc scale-invariant": scale_err <= 1e-10,
        "zc stable 5%": drift <= 0.05,
        "sign flip at zc": flips,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    acceptance_report(
        13,
        ok,
        f"residual {coarse.residual:.3f} (24^3) -> {fine.residual:.3f} (48^3); zc {zc_c:.1f} -> {zc_f:.1f} "
        f"(drift {100 * drift:.2f}%), scaling error {scale_err:.1e}"
        + (f"; failed: {', '.join(failed)}" if failed else ""),
    )
    assert ok, f"unmet parts: {failed}"


def test_criterion_14_self_convergence(coupled_run, acceptance_report):
    res, _ = coupled_run
    ref = run(coupled_state(), T6, StepConfig(h=H / 8)).final
    hs = [4 * H, 2 * H, H]
    finals = [run(coupled_state(), T6, StepConfig(h=h)).final for h in hs[:2]] + [res.final]
    errs = [state_distance(f, ref) for f in finals]
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    ok = abs(slope - 2) <= 0.3
    acceptance_report(14, ok, "errors " + ", ".join(f"{e:.2e}" for e in errs) + f"; log-log slope {slope:.3f}")
    assert ok


def test_criterion_15_thread_reproducibility(tmp_path, acceptance_report):
    cfg = tmp_path / "coupled.ini"
    cfg.write_text(COUPLED_INI.format(t_final=0.02))
    tables = []
    for threads in ("1", "8"):
        out = tmp_path / f"threads{threads}"
        env = dict(os.environ, MP_THREADS=threads)
        proc = subprocess.run(
            [sys.executable, "-m", "maxwell_pauli.cli", "run", str(cfg), "--output-dir", str(out), "--quiet"],
            env=env,
            capture_output=True,
        )
        assert proc.returncode == 0, proc.stderr.decode()
        tables.append((out / "diagnostics.csv").read_bytes())
    ok = tables[0] == tables[1] and len(tables[0].splitlines()) == 22
    acceptance_report(15, ok, f"diagnostics tables {'bit-identical' if ok else 'differ'} ({len(tables[0])} bytes)")
    assert ok
