"""Command-line driver: ``mp run|continue|zeromode|audit``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .evolver import StepConfig, dissipation_audit, epsilon_continuation, run
from .io import (
    ConfigError,
    DiagnosticsWriter,
    RunConfig,
    SnapshotError,
    field_hash,
    initial_state,
    parse_config,
    persist_snapshot,
    read_ledger,
    write_manifest,
)
from .spectral import fft_workers

log = logging.getLogger("maxwell_pauli")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _step_config(cfg: RunConfig, h: float | None = None) -> StepConfig:
    st = cfg.stepping
    return StepConfig(h=h or st["h"], tol=st["tol_p"], max_iter=st["max_picard"], max_halvings=st["max_halvings"])


def _out_dir(cfg: RunConfig, override: str | None) -> Path:
    d = Path(override or cfg.output["directory"] or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _audit_summary(ledger, eps: float, energy_tol: float, charge_tol: float) -> dict:
    rep = dissipation_audit(ledger, eps)
    F = ledger.column("F")
    F0 = F[0] if len(F) else 0.0
    f_drift = float(np.max(np.abs(F - F0)) / F0) if F0 > 0 else float(np.max(np.abs(F - F0), initial=0.0))
    charge0 = ledger.column("charge")[0] if len(ledger) else 0.0
    charge_audited = abs(charge0 - 1.0) < 1e-12
    energy_ok = rep.energy_defect <= energy_tol * max(1.0, abs(rep.E0))
    charge_ok = rep.charge_deviation <= charge_tol if charge_audited else True
    return {
        "energy_defect": rep.energy_defect,
        "energy_tol": energy_tol * max(1.0, abs(rep.E0)),
        "charge_deviation": rep.charge_deviation if charge_audited else None,
        "charge_tol": charge_tol,
        "monotonicity_violations": rep.monotonicity_violations,
        "max_energy_increase": rep.max_increase,
        "field_energy_drift": f_drift,
        "E0": rep.E0,
        "eps": eps,
        "passed": bool(energy_ok and charge_ok and rep.monotonicity_violations == 0),
    }


def command_run(cfg: RunConfig, out: Path, quiet: bool = False) -> int:
    manifest = {
        "command": "run",
        "config": cfg.echo(),
        "version": __version__,
        "threads": fft_workers(),
        "stability_hypothesis": cfg.stability,
        "start": _now(),
    }
    status = 1
    try:
        state = initial_state(cfg)
        manifest["initial_field_sha256"] = field_hash(state)
        every = cfg.output["snapshot_every"]
        with DiagnosticsWriter(out / "diagnostics.csv") as writer:
            result = run(state, cfg.stepping["t_final"], _step_config(cfg), snapshot_every=every, on_row=writer)
        for i, snap in enumerate(result.snapshots):
            persist_snapshot(snap, out / f"snapshot_{i:05d}.mpsnap")
        persist_snapshot(result.final, out / "final.mpsnap")
        audit = _audit_summary(result.ledger, state.eps, cfg.stepping["energy_tol"], cfg.stepping["charge_tol"])
        manifest["audit"] = audit
        manifest["final_time"] = result.final.t
        if result.completed:
            manifest["status"] = "completed" if audit["passed"] else "audit_failed"
            manifest["failure_stage"] = None if audit["passed"] else "dissipation_audit"
            status = 0 if audit["passed"] else 1
        else:
            manifest["status"] = "failed"
            manifest["failure_stage"] = result.failure.stage
            manifest["failure"] = str(result.failure)
    except (ConfigError, SnapshotError, ValueError) as exc:
        manifest["status"] = "failed"
        manifest["failure_stage"] = "setup"
        manifest["failure"] = str(exc)
        status = 2
    manifest["end"] = _now()
    write_manifest(out / "manifest.json", manifest)
    if not quiet:
        _report(manifest)
    return status


def _report(manifest: dict):
    print(f"status: {manifest['status']}")
    if manifest.get("failure_stage"):
        print(f"failure stage: {manifest['failure_stage']}")
    if manifest.get("failure"):
        print(manifest["failure"])
    audit = manifest.get("audit")
    if audit:
        print(
            "audit: energy defect %.3e (tol %.1e), charge deviation %s, F drift %.3e, violations %d"
            % (
                audit["energy_defect"],
                audit["energy_tol"],
                "n/a" if audit["charge_deviation"] is None else "%.3e" % audit["charge_deviation"],
                audit["field_energy_drift"],
                audit["monotonicity_violations"],
            )
        )


def command_continuation(cfg: RunConfig, out: Path, quiet: bool = False) -> int:
    eps_list = list(cfg.continuation["eps_list"]) or [cfg.physics["eps"]]
    h_list = cfg.continuation["h_list"]
    configs = [_step_config(cfg, h) for h in h_list] if h_list else None
    manifest = {"command": "continue", "config": cfg.echo(), "version": __version__, "start": _now()}
    state = initial_state(cfg)
    manifest["initial_field_sha256"] = field_hash(state)
    res = epsilon_continuation(
        state,
        eps_list,
        cfg.stepping["t_final"],
        _step_config(cfg),
        sample_every=cfg.continuation["sample_every"],
        member_configs=configs,
    )
    with open(out / "continuation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n", "eps_n", "eps_n1", "D_n"))
        for i, d in enumerate(res.distances):
            w.writerow((i, "%.17g" % res.eps[i], "%.17g" % res.eps[i + 1], "%.17g" % d))
    with open(out / "bounds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("eps", "grad_phi", "F", "A_over_1pt", "status"))
        for e, b, f in zip(res.eps, res.bounds, res.failures):
            vals = ("%.17g" % b[k] for k in ("grad_phi", "F", "A_over_1pt")) if b else ("nan",) * 3
            w.writerow(("%.17g" % e, *vals, "ok" if f is None else "failed"))
    finite = [d for d in res.distances if math.isfinite(d)]
    manifest.update(
        status="completed" if res.complete else "partial",
        failures=res.failures,
        distances=res.distances,
        decreasing=all(b < a for a, b in zip(finite, finite[1:])),
        end=_now(),
    )
    write_manifest(out / "manifest.json", manifest)
    if not quiet:
        for i, d in enumerate(res.distances):
            print(f"D_{i} = {d:.6e}  (eps {res.eps[i]:g} -> {res.eps[i + 1]:g})")
        for e, f in zip(res.eps, res.failures):
            if f:
                print(f"member eps={e:g} failed: {f}")
    return 0 if res.complete else 1


def command_zero_mode(cfg: RunConfig, out: Path, quiet: bool = False) -> int:
    from .spectral import norm
    from .zero_mode import (
        ZeroModeCandidate,
        loss_yau_pair,
        one_body_energy_slope,
        variational_zero_mode,
        zc_functional,
        zero_mode_residual,
    )

    zm = cfg.zeromode
    grid = cfg.make_grid()
    alpha = cfg.physics["alpha"]
    spin = zm["spin"][0] if zm["spin"] else (1.0, 0.0)
    if zm["candidate"] == "constant":
        psi = np.zeros((2,) + grid.shape, complex)
        psi[:] = np.asarray(spin, complex)[:, None, None, None]
        psi /= norm(psi, grid)
        A = np.zeros((3,) + grid.shape)
        cand = ZeroModeCandidate(psi, A, grid, zero_mode_residual(psi, A, grid))
    else:
        cand = loss_yau_pair(grid, spin, zm["scale"], threshold=zm["threshold"])
    report = {"command": "zeromode", "config": cfg.echo(), "version": __version__, "alpha": alpha}
    report["initial_residual"] = cand.residual
    if zm["descent_iterations"] > 0:
        d = variational_zero_mode(cand, zm["descent_iterations"], zm["learning_rate"])
        cand = d.candidate
        report["descent"] = {"accepted": d.accepted, "rejected": d.rejected, "history": d.history}
    zc = zc_functional(cand.psi, cand.A, alpha, grid)
    report.update(
        residual=cand.residual,
        threshold=zm["threshold"],
        residual_within_threshold=cand.residual <= zm["threshold"],
        zc_functional=zc,
    )
    sweep = list(zm["z_sweep"]) or [0.0, 0.5 * zc, zc, 2 * zc]
    rows = []
    for Z in sweep:
        s = one_body_energy_slope(cand, Z, alpha)
        rows.append((Z, s, int(np.sign(s))))
    with open(out / "zeromode_slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("Z", "slope", "sign"))
        for Z, s, sg in rows:
            w.writerow(("%.17g" % Z, "%.17g" % s, sg))
    report["slopes"] = rows
    report["end"] = _now()
    write_manifest(out / "zeromode.json", report)
    if not quiet:
        flag = "ok" if report["residual_within_threshold"] else "ABOVE THRESHOLD"
        print(f"residual {cand.residual:.3e} ({flag} {zm['threshold']:g}); zc functional {zc:.6g}")
        for Z, s, sg in rows:
            print(f"  Z = {Z:.6g}: slope {s:+.6e}")
    return 0


def command_audit(ledger_path: Path, eps: float | None, energy_tol: float, charge_tol: float, quiet: bool) -> int:
    if eps is None:
        man = ledger_path.parent / "manifest.json"
        if not man.exists():
            print("audit: pass --eps or keep manifest.json next to the ledger", file=sys.stderr)
            return 2
        eps = json.loads(man.read_text())["config"]["physics"]["eps"]
    ledger = read_ledger(ledger_path, eps)
    summary = _audit_summary(ledger, eps, energy_tol, charge_tol)
    if not quiet:
        print(json.dumps(summary, indent=2))
    return 0 if summary["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mp", description="eps-modified Maxwell-Pauli solver")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "integrate one configuration"),
        ("continue", "eps-continuation study"),
        ("zeromode", "zero-mode and critical-charge report"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
        sp.add_argument("--output-dir")
        sp.add_argument("--quiet", action="store_true")
    sp = sub.add_parser("audit", help="re-audit a diagnostics table")
    sp.add_argument("ledger")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--energy-tol", type=float, default=1e-6)
    sp.add_argument("--charge-tol", type=float, default=1e-8)
    sp.add_argument("--output-dir")
    sp.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "audit":
        return command_audit(Path(args.ledger), args.eps, args.energy_tol, args.charge_tol, args.quiet)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if not cfg.stability["passed"] and not args.quiet:
        print(f"warning: stability hypothesis not met: {cfg.stability['message']}", file=sys.stderr)
    out = _out_dir(cfg, args.output_dir)
    t0 = time.perf_counter()
    handler = {"run": command_run, "continue": command_continuation, "zeromode": command_zero_mode}[args.command]
    code = handler(cfg, out, args.quiet)
    if not args.quiet:
        print(f"{args.command} finished in {time.perf_counter() - t0:.1f} s with exit status {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
