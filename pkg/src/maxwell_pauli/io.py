"""Run configuration, field snapshots, diagnostics tables and run manifests.

Configuration files are INI-style with the sections and keys listed in
``SCHEMA``. Unknown sections or keys, duplicates and malformed values are
errors naming the offending key and its line.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .energy import NuclearConfig
from .evolver import LEDGER_COLUMNS, EnergyLedger, SystemState, make_state
from .spectral import SpectralGrid, make_grid, norm, random_solenoidal

PRESETS = ("gaussian-packet", "plane-wave", "loss-yau-seed", "vacuum", "snapshot")

# section -> key -> (parser name, default); a default of ... marks a required key
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "grid": {"L": ("float", ...), "n": ("int", ...), "dealias": ("bool", True)},
    "physics": {
        "alpha": ("float", ...),
        "eps": ("float", 0.0),
        "electrons": ("int", 1),
        "positions": ("triples", ()),
        "charges": ("floats", ()),
        "softening": ("float", 0.0),
        "couple_field": ("bool", True),
    },
    "initial": {
        "preset": ("str", "gaussian-packet"),
        "snapshot": ("str", ""),
        "center": ("triples", ()),
        "width": ("float", 1.0),
        "momentum": ("triples", ()),
        "spin": ("spins", ()),
        "wavevector": ("triples", ()),
        "scale": ("float", 1.0),
        "field_amplitude": ("float", 0.0),
        "field_band": ("int", 0),
        "seed": ("int", 0),
    },
    "stepping": {
        "h": ("float", 1e-3),
        "t_final": ("float", 0.0),
        "tol_p": ("float", 1e-10),
        "max_picard": ("int", 25),
        "max_halvings": ("int", 8),
        "energy_tol": ("float", 1e-6),
        "charge_tol": ("float", 1e-8),
    },
    "output": {"snapshot_every": ("int", 0), "directory": ("str", "")},
    "continuation": {"eps_list": ("floats", ()), "h_list": ("floats", ()), "sample_every": ("int", 1)},
    "zeromode": {
        "candidate": ("str", "loss-yau"),
        "spin": ("spins", ()),
        "scale": ("float", 1.0),
        "threshold": ("float", 1e-3),
        "descent_iterations": ("int", 0),
        "learning_rate": ("float", 1e-2),
        "z_sweep": ("floats", ()),
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid: dict
    physics: dict
    initial: dict
    stepping: dict
    output: dict
    continuation: dict
    zeromode: dict
    source: str = ""
    stability: dict = field(default_factory=dict)

    def make_grid(self) -> SpectralGrid:
        return make_grid(self.grid["L"], self.grid["n"], self.grid["dealias"])

    def nuclei(self) -> NuclearConfig:
        return NuclearConfig(self.physics["positions"], self.physics["charges"])

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("stability")
        return d


def _parse_value(kind: str, raw: str):
    raw = raw.strip()
    if kind == "float":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("not finite")
        return v
    if kind == "int":
        return int(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected on/off")
    if kind == "str":
        return raw
    if kind == "floats":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if kind == "triples":
        out = []
        for part in filter(None, (p.strip() for p in raw.split(";"))):
            vals = [float(x) for x in part.replace(",", " ").split()]
            if len(vals) != 3:
                raise ValueError(f"expected three numbers in {part!r}")
            out.append(tuple(vals))
        return tuple(out)
    if kind == "spins":
        out = []
        for part in filter(None, (p.strip() for p in raw.split(";"))):
            vals = [complex(x) for x in part.replace(",", " ").split()]
            if len(vals) != 2:
                raise ValueError(f"expected two components in {part!r}")
            out.append(tuple(vals))
        return tuple(out)
    raise AssertionError(kind)


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and "=" in s and s.split("=", 1)[0].strip() == key:
            return i
    return None


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                line = _line_of(text, section, key)
                raise ConfigError(f"{source}:{line}: unknown key '{key}' in [{section}]")
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (kind, default) in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    values[section][key] = _parse_value(kind, raw)
                except ValueError as exc:
                    line = _line_of(text, section, key)
                    raise ConfigError(f"{source}:{line}: bad value for [{section}] {key} = {raw!r}: {exc}") from None
            elif default is ...:
                raise ConfigError(f"{source}: missing required key '{key}' in [{section}]")
            else:
                values[section][key] = default
    cfg = RunConfig(**values, source=source)
    _validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config_text(text, str(path))
    snap = cfg.initial["snapshot"]
    if snap and not Path(snap).is_absolute():
        cfg.initial["snapshot"] = str((path.parent / snap).resolve())
    if cfg.initial["preset"] == "snapshot" and not Path(cfg.initial["snapshot"]).exists():
        raise ConfigError(f"{path}: snapshot file {cfg.initial['snapshot']} does not exist")
    return cfg


def _validate(cfg: RunConfig):
    from .energy import validate_stability_hypothesis

    src = cfg.source
    ph, ini, st = cfg.physics, cfg.initial, cfg.stepping
    try:
        cfg.make_grid()
    except ValueError as exc:
        raise ConfigError(f"{src}: [grid] {exc}") from None
    if ph["alpha"] <= 0:
        raise ConfigError(f"{src}: [physics] alpha must be positive")
    if ph["eps"] < 0:
        raise ConfigError(f"{src}: [physics] eps must be nonnegative")
    if ph["electrons"] not in (1, 2):
        raise ConfigError(f"{src}: [physics] electrons must be 1 or 2")
    if ph["softening"] < 0:
        raise ConfigError(f"{src}: [physics] softening must be nonnegative")
    try:
        nuclei = cfg.nuclei()
    except ValueError as exc:
        raise ConfigError(f"{src}: [physics] positions/charges: {exc}") from None
    if ini["preset"] not in PRESETS:
        raise ConfigError(f"{src}: [initial] preset must be one of {', '.join(PRESETS)}")
    if ini["preset"] == "snapshot" and not ini["snapshot"]:
        raise ConfigError(f"{src}: [initial] preset = snapshot needs a snapshot path")
    if ini["width"] <= 0 or ini["scale"] <= 0:
        raise ConfigError(f"{src}: [initial] width and scale must be positive")
    if st["h"] <= 0 or st["tol_p"] <= 0 or st["max_picard"] < 1:
        raise ConfigError(f"{src}: [stepping] need h > 0, tol_p > 0, max_picard >= 1")
    if st["t_final"] < 0:
        raise ConfigError(f"{src}: [stepping] t_final must be nonnegative")
    if any(e < 0 for e in cfg.continuation["eps_list"]):
        raise ConfigError(f"{src}: [continuation] eps_list entries must be nonnegative")
    h_list = cfg.continuation["h_list"]
    if h_list and len(h_list) != len(cfg.continuation["eps_list"]):
        raise ConfigError(f"{src}: [continuation] h_list must match eps_list in length")
    if cfg.zeromode["candidate"] not in ("loss-yau", "constant"):
        raise ConfigError(f"{src}: [zeromode] candidate must be loss-yau or constant")
    rep = validate_stability_hypothesis(ph["alpha"], nuclei, ph["electrons"])
    cfg.stability = {"passed": rep.passed, "exempt": rep.exempt, "message": rep.message}


def _spin(cfg_spins, j: int, default=(1.0, 0.0)) -> np.ndarray:
    s = np.asarray(cfg_spins[j] if j < len(cfg_spins) else default, complex)
    return s / np.sqrt(np.sum(np.abs(s) ** 2))


def _one_body(cfg: RunConfig, grid: SpectralGrid, j: int) -> np.ndarray:
    ini = cfg.initial
    X = grid.coords()
    preset = ini["preset"]
    if preset == "plane-wave":
        m = np.asarray(ini["wavevector"][j] if j < len(ini["wavevector"]) else (0, 0, 0), float)
        k = 2 * np.pi * m / grid.L
        amp = np.exp(1j * np.tensordot(k, X, axes=1))
    else:
        default = tuple(grid.L / 2 + 0.5 * j * np.array([1.0, 0.0, 0.0]))
        c = np.asarray(ini["center"][j] if j < len(ini["center"]) else default, float)
        d = X - c[:, None, None, None]
        d -= grid.L * np.round(d / grid.L)
        p = np.asarray(ini["momentum"][j] if j < len(ini["momentum"]) else (0, 0, 0), float)
        amp = np.exp(-np.sum(d**2, axis=0) / (2 * ini["width"] ** 2) + 1j * np.tensordot(p, d, axes=1))
    return _spin(ini["spin"], j)[:, None, None, None] * amp


def initial_state(cfg: RunConfig) -> SystemState:
    """Build the initial state described by ``cfg`` (projected, band-limited, normalized)."""
    from .zero_mode import loss_yau_fields

    ini, ph = cfg.initial, cfg.physics
    if ini["preset"] == "snapshot":
        st = load_snapshot(ini["snapshot"])
        grid = cfg.make_grid()
        if st.grid.n != grid.n or st.grid.L != grid.L:
            raise ConfigError(f"snapshot grid (L={st.grid.L}, n={st.grid.n}) differs from config grid")
        return make_state(
            st.phi, st.A, st.Adot, grid, ph["alpha"], ph["eps"], cfg.nuclei(), ph["softening"], st.t,
            coupled=ph["couple_field"],
        )
    grid = cfg.make_grid()
    N = ph["electrons"]
    rng = np.random.default_rng(ini["seed"])
    A = np.zeros((3,) + grid.shape)
    if ini["preset"] == "loss-yau-seed":
        if N != 1:
            raise ConfigError("loss-yau-seed is a one-electron preset")
        phi, A = loss_yau_fields(grid, _spin(ini["spin"], 0), ini["scale"])
    elif ini["preset"] == "vacuum":
        phi = np.zeros((2,) * N + (grid.n,) * (3 * N), dtype=complex)
    else:
        phis = [_one_body(cfg, grid, j) for j in range(N)]
        phi = phis[0] if N == 1 else np.einsum("aijk,blmn->abijklmn", phis[0], phis[1])
    if ini["field_amplitude"]:
        band = ini["field_band"] or None
        A = A + ini["field_amplitude"] * random_solenoidal(grid, rng, band)
    st = make_state(
        phi, A, None, grid, ph["alpha"], ph["eps"], cfg.nuclei(), ph["softening"], coupled=ph["couple_field"]
    )
    if ini["preset"] == "vacuum":
        return st
    nrm = norm(st.phi, grid, N)
    if not nrm > 1e-10 * norm(phi, grid, N):
        raise ConfigError("initial wavefunction vanishes (antisymmetric product of identical orbitals?)")
    st.phi = st.phi / nrm
    return st


# snapshots ---------------------------------------------------------------

MAGIC = b"MPSNAP01"
_HEADER = struct.Struct("<8sQQdQQQ8x")
assert _HEADER.size == 64


class SnapshotError(ValueError):
    pass


def _nuclei_meta(nuclei: NuclearConfig) -> dict:
    return {"positions": nuclei.positions.tolist(), "charges": nuclei.charges.tolist()}


def snapshot_bytes(state: SystemState) -> bytes:
    meta = {
        "t": state.t,
        "eps": state.eps,
        "alpha": state.alpha,
        "softening": state.softening,
        "coupled": state.coupled,
        "dealias": state.grid.dealias,
        "nuclei": _nuclei_meta(state.nuclei),
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode()
    phi = np.ascontiguousarray(state.phi, dtype="<c16")
    A = np.ascontiguousarray(state.A, dtype="<f8")
    Ad = np.ascontiguousarray(state.Adot, dtype="<f8")
    head = _HEADER.pack(MAGIC, state.grid.n, state.n_electrons, state.grid.L, phi.size, A.size, len(meta_raw))
    return head + phi.tobytes() + A.tobytes() + Ad.tobytes() + meta_raw


def persist_snapshot(state: SystemState, path) -> None:
    Path(path).write_bytes(snapshot_bytes(state))


def load_snapshot(path, grid: SpectralGrid | None = None) -> SystemState:
    """Read a snapshot; with ``grid`` given, its size must match."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, n, N, L, nphi, nA, nmeta = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if N not in (1, 2) or nphi != 2**N * n ** (3 * N) or nA != 3 * n**3:
        raise SnapshotError(f"{path}: inconsistent counts for n = {n}, N = {N}")
    if grid is not None and (grid.n != n or grid.L != L):
        raise SnapshotError(f"{path}: snapshot grid (n={n}, L={L}) does not match (n={grid.n}, L={grid.L})")
    need = _HEADER.size + 16 * nphi + 16 * nA + nmeta
    if len(raw) != need:
        raise SnapshotError(f"{path}: expected {need} bytes, found {len(raw)} (truncated?)")
    off = _HEADER.size
    phi = np.frombuffer(raw, "<c16", nphi, off).reshape((2,) * N + (n,) * (3 * N)).astype(complex)
    off += 16 * nphi
    A = np.frombuffer(raw, "<f8", nA, off).reshape((3, n, n, n)).astype(float)
    off += 8 * nA
    Ad = np.frombuffer(raw, "<f8", nA, off).reshape((3, n, n, n)).astype(float)
    off += 8 * nA
    meta = json.loads(raw[off:].decode())
    g = grid if grid is not None else make_grid(L, n, meta.get("dealias", True))
    nuclei = NuclearConfig(meta["nuclei"]["positions"], meta["nuclei"]["charges"])
    return SystemState(
        phi, A, Ad, g, meta["alpha"], meta["eps"], meta["t"], nuclei, meta["softening"], meta.get("coupled", True)
    )


def field_hash(state: SystemState) -> str:
    h = hashlib.sha256()
    for a in (state.phi, state.A, state.Adot):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


# diagnostics tables --------------------------------------------------------


def format_row(row) -> list[str]:
    out = []
    for name, v in zip(LEDGER_COLUMNS, row):
        out.append(str(int(v)) if name == "picard_iters" else "%.17g" % v)
    return out


class DiagnosticsWriter:
    """Append-only CSV writer, one row per step, flushed as it goes."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(LEDGER_COLUMNS)

    def __call__(self, row):
        self._w.writerow(format_row(row))
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def ledger_csv(ledger: EnergyLedger) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEDGER_COLUMNS)
    for row in ledger.rows:
        w.writerow(format_row(row))
    return buf.getvalue()


def read_ledger(path, eps: float) -> EnergyLedger:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != LEDGER_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for i, rec in enumerate(reader, 2):
            if len(rec) != len(LEDGER_COLUMNS):
                raise ValueError(f"{path}:{i}: expected {len(LEDGER_COLUMNS)} columns")
            vals = [float(x) for x in rec]
            vals[8] = int(vals[8])
            rows.append(tuple(vals))
    return EnergyLedger(eps, rows)


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
