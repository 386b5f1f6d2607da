"""Binary trajectory files and JSON run configuration.

Trajectory file layout (little-endian)::

    header  magic b"TGF3", version u32, N u32, components u32 (=2),
            steps u32, dt f64, L f64, role u32            -> 40 bytes
    body    for each snapshot n = 0..steps:
              for k1 in -N/2+1 .. N/2 (outer), k2 in -N/2+1 .. N/2 (inner),
              skipping k = (0, 0):
                component 0 (re, im), component 1 (re, im) as f64

Entries with a component equal to N/2 are always zero in memory and are
written as such, so the body holds ``(steps+1) * (N**2 - 1) * 2 * 16`` bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forcing import NoiseSpec
from .spectral import FluidParams, TorusGrid
from .state import Role, TimeGrid, Trajectory

__all__ = [
    "ConfigError",
    "TrajectoryFormatError",
    "RunConfig",
    "load_config",
    "parse_config",
    "write_trajectory",
    "read_trajectory",
    "file_mode_order",
]

MAGIC = b"TGF3"
VERSION = 1
HEADER = struct.Struct("<4sIIIIddI")


class TrajectoryFormatError(ValueError):
    pass


def file_mode_order(N: int) -> tuple[np.ndarray, np.ndarray]:
    """FFT-array indices of the file's mode sequence."""
    ks = np.arange(-N // 2 + 1, N // 2 + 1)
    k1, k2 = np.meshgrid(ks, ks, indexing="ij")
    keep = (k1 != 0) | (k2 != 0)
    return k1[keep] % N, k2[keep] % N


def write_trajectory(path, traj: Trajectory) -> None:
    """Write one (unbatched) trajectory."""
    if traj.data.ndim != 4:
        raise ValueError("write one sample at a time (trajectory has batch axes)")
    g, tg = traj.grid, traj.tg
    i1, i2 = file_mode_order(g.N)
    body = traj.data[:, :, i1, i2]  # (steps+1, 2, K)
    body = np.moveaxis(body, 1, 2)  # (steps+1, K, 2)
    flat = np.stack([body.real, body.imag], axis=-1).astype("<f8")
    head = HEADER.pack(MAGIC, VERSION, g.N, 2, tg.steps, tg.dt, g.L, int(traj.role))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(flat.tobytes())


def read_trajectory(path) -> Trajectory:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise TrajectoryFormatError(f"{path}: file shorter than header")
    magic, version, N, comps, steps, dt, L, role = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TrajectoryFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise TrajectoryFormatError(f"{path}: unsupported version {version}")
    if comps != 2:
        raise TrajectoryFormatError(f"{path}: expected 2 components, got {comps}")
    K = N * N - 1
    expect = HEADER.size + (steps + 1) * K * 2 * 16
    if len(raw) != expect:
        raise TrajectoryFormatError(f"{path}: length {len(raw)} != expected {expect}")
    flat = np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(steps + 1, K, 2, 2)
    vals = flat[..., 0] + 1j * flat[..., 1]
    grid = TorusGrid(L=L, N=N)
    data = np.zeros((steps + 1, 2, N, N), dtype=complex)
    i1, i2 = file_mode_order(N)
    data[:, :, i1, i2] = np.moveaxis(vals, 2, 1)
    # dt is stored, T is reconstructed so that T / steps reproduces dt exactly
    tg = TimeGrid(dt * steps, steps)
    if tg.dt != dt:
        tg = _timegrid_matching(dt, steps)
    return Trajectory(grid, tg, data, Role(role))


def _timegrid_matching(dt: float, steps: int) -> TimeGrid:
    T = dt * steps
    for cand in (T, math.nextafter(T, math.inf), math.nextafter(T, -math.inf)):
        if cand / steps == dt:
            return TimeGrid(cand, steps)
    return TimeGrid(T, steps)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry as a dotted path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class InitialSpec:
    kind: str = "zero"  # zero | random | file
    amplitude: float = 1.0
    band: int = 3
    seed: int = 0
    file: str | None = None


@dataclass
class SyntheticControlSpec:
    amplitude: float = 0.0
    band: int = 2
    seed: int = 1
    omega: float = 2 * math.pi


@dataclass
class OptimizerSpec:
    max_iters: int = 200
    step0: float | None = None
    armijo_c: float = 1e-4
    tol_residual: float = 0.0
    rel_tol: float | None = 1e-4


@dataclass
class RunConfig:
    grid: TorusGrid
    tg: TimeGrid
    fluid: FluidParams
    noise: NoiseSpec
    lam: float = 1.0
    radius_R: float = math.inf
    samples: int = 1
    target_file: str | None = None
    control_file: str | None = None
    output_dir: str = "out"
    initial: InitialSpec = field(default_factory=InitialSpec)
    synthetic_control: SyntheticControlSpec = field(default_factory=SyntheticControlSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    theta_raised_from: float | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q


_SCHEMA = {
    "grid": {"L": "num", "N": "int"},
    "time": {"T": "num", "steps": "int"},
    "fluid": {"nu": "num", "alpha1": "num", "alpha2": "num", "beta": "num", "enforce_thermo": "bool"},
    "noise": {"sigma": "num", "s": "num", "gamma": "num", "theta": "num", "cutoff": "num?",
              "c_hat": "num?", "master_seed": "int"},
    "control": {"lambda": "num", "radius_R": "num?", "samples": "int"},
    "paths": {"target_file": "str?", "control_file": "str?", "output_dir": "str"},
    "initial": {"kind": "str", "amplitude": "num", "band": "int", "seed": "int", "file": "str?"},
    "synthetic_control": {"amplitude": "num", "band": "int", "seed": "int", "omega": "num"},
    "optimizer": {"max_iters": "int", "step0": "num?", "armijo_c": "num", "tol_residual": "num",
                  "rel_tol": "num?"},
}
_REQUIRED = ("grid", "time", "fluid")


def _typed(key: str, val, kind: str):
    opt = kind.endswith("?")
    kind = kind.rstrip("?")
    if val is None:
        if opt:
            return None
        raise ConfigError(key, "must not be null")
    if kind == "bool":
        if not isinstance(val, bool):
            raise ConfigError(key, f"expected true/false, got {val!r}")
        return val
    if kind == "int":
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(key, f"expected an integer, got {val!r}")
        return val
    if kind == "num":
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(key, f"expected a number, got {val!r}")
        if math.isnan(val):
            raise ConfigError(key, "NaN is not allowed")
        return float(val)
    if kind == "str":
        if not isinstance(val, str):
            raise ConfigError(key, f"expected a string, got {val!r}")
        return val
    raise AssertionError(kind)


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected an object")
    schema = _SCHEMA[name]
    for k in sec:
        if k not in schema:
            raise ConfigError(f"{name}.{k}", "unknown key")
    return {k: _typed(f"{name}.{k}", v, schema[k]) for k, v in sec.items()}


def _need(sec: dict, name: str, key: str):
    if key not in sec:
        raise ConfigError(f"{name}.{key}", "missing required key")
    return sec[key]


def parse_config(doc, base_dir: Path | None = None) -> RunConfig:
    """Validate a decoded JSON document and build the run configuration."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for k in doc:
        if k not in _SCHEMA:
            raise ConfigError(k, "unknown section")
    for k in _REQUIRED:
        if k not in doc:
            raise ConfigError(k, "missing required section")
    s = {name: _section(doc, name) for name in _SCHEMA}

    try:
        grid = TorusGrid(L=_need(s["grid"], "grid", "L"), N=_need(s["grid"], "grid", "N"))
    except ValueError as e:
        raise ConfigError("grid", str(e)) from None
    try:
        tg = TimeGrid(_need(s["time"], "time", "T"), _need(s["time"], "time", "steps"))
    except ValueError as e:
        raise ConfigError("time", str(e)) from None
    fl = s["fluid"]
    try:
        fluid = FluidParams(_need(fl, "fluid", "nu"), _need(fl, "fluid", "alpha1"),
                            _need(fl, "fluid", "alpha2"), _need(fl, "fluid", "beta"),
                            fl.get("enforce_thermo", True))
    except ValueError as e:
        raise ConfigError("fluid", str(e)) from None
    nz = dict(s["noise"])
    if "master_seed" in nz and not 0 <= nz["master_seed"] < 2**64:
        raise ConfigError("noise.master_seed", "must fit in 64 unsigned bits")
    try:
        noise = NoiseSpec(**nz)
    except (ValueError, TypeError) as e:
        raise ConfigError("noise", str(e)) from None
    raised = None
    adm = noise.admissible(grid)
    if adm.theta != noise.theta:
        raised = noise.theta
        noise = adm

    ct = s["control"]
    lam = ct.get("lambda", 1.0)
    if not lam > 0:
        raise ConfigError("control.lambda", "must be positive")
    R = ct.get("radius_R")
    R = math.inf if R is None else R
    if not R > 0:
        raise ConfigError("control.radius_R", "must be positive")
    samples = ct.get("samples", 1)
    if samples < 1:
        raise ConfigError("control.samples", "must be >= 1")

    ini = InitialSpec(**s["initial"])
    if ini.kind not in ("zero", "random", "file"):
        raise ConfigError("initial.kind", f"expected zero, random or file, got {ini.kind!r}")
    if ini.kind == "file" and not ini.file:
        raise ConfigError("initial.file", "required when initial.kind is 'file'")
    opt = OptimizerSpec(**s["optimizer"])
    if opt.max_iters < 0:
        raise ConfigError("optimizer.max_iters", "must be >= 0")
    if not 0 < opt.armijo_c < 1:
        raise ConfigError("optimizer.armijo_c", "must lie in (0, 1)")
    if opt.step0 is not None and not opt.step0 > 0:
        raise ConfigError("optimizer.step0", "must be positive")

    pa = s["paths"]
    return RunConfig(
        grid=grid, tg=tg, fluid=fluid, noise=noise, lam=lam, radius_R=R, samples=samples,
        target_file=pa.get("target_file"), control_file=pa.get("control_file"),
        output_dir=pa.get("output_dir", "out"), initial=ini,
        synthetic_control=SyntheticControlSpec(**s["synthetic_control"]),
        optimizer=opt, theta_raised_from=raised, base_dir=base_dir or Path.cwd(),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {path}: {e.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<json>", f"line {e.lineno} column {e.colno}: {e.msg}") from None
    return parse_config(doc, path.resolve().parent)
