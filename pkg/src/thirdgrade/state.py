"""Forward solves for the velocity: decomposed path ``v = u + z`` and a direct Euler-Maruyama cross-check."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .forcing import NoisePath, NoiseSpec, ou_path
from .spectral import (
    FluidParams,
    SpectralField,
    TorusGrid,
    aL4_4,
    dot_spec,
    grad_phys,
    hs_sq,
    l2sq,
    leray,
    nonlinear_G,
    quad,
    ddot,
    advect,
    matmul,
    sym,
    upsilon_mult,
)
from .timestepping import NonFiniteError, lawson_rk4, with_midpoints

__all__ = [
    "Role",
    "TimeGrid",
    "Trajectory",
    "StateRunReport",
    "noise_trajectory",
    "solve_state",
    "solve_state_direct",
    "reconstruct_v",
    "energy_audit",
    "energy_terms",
]


class Role(enum.IntEnum):
    state_u = 0
    noise_z = 1
    state_v = 2
    linearized_m = 3
    adjoint_p = 4
    target_vd = 5
    control_f = 6


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if self.steps < 1 or int(self.steps) != self.steps:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.steps * factor)


@dataclass(eq=False)
class Trajectory:
    """Dense-in-time snapshots ``data[n]`` at ``t_n = n dt``.

    ``data`` has shape ``(steps + 1, *batch, 2, N, N)``.  ``half`` optionally
    carries exact values on the half-step lattice (``2 * steps + 1`` entries);
    the noise component uses it so stage evaluations need no interpolation.
    """

    grid: TorusGrid
    tg: TimeGrid
    data: np.ndarray
    role: Role
    half: np.ndarray | None = None

    def __post_init__(self):
        super().__setattr__("role", Role(self.role))
        object.__setattr__(self, "_role_set", True)
        g = self.grid
        if self.data.shape[0] != self.tg.steps + 1:
            raise ValueError(f"expected {self.tg.steps + 1} snapshots, got {self.data.shape[0]}")
        if self.data.shape[-3:] != (2, g.N, g.N):
            raise ValueError("snapshot shape does not match grid")
        if self.half is not None and self.half.shape[0] != 2 * self.tg.steps + 1:
            raise ValueError("half-step series has the wrong length")

    def __setattr__(self, name, value):
        if name == "role" and self.__dict__.get("_role_set"):
            raise AttributeError("role is immutable")
        super().__setattr__(name, value)

    @property
    def batch_shape(self) -> tuple:
        return self.data.shape[1:-3]

    def at(self, n: int) -> SpectralField:
        return SpectralField(self.grid, self.data[n], True)

    def half_series(self) -> np.ndarray:
        return self.half if self.half is not None else with_midpoints(self.data)

    def sample(self, i: int) -> "Trajectory":
        half = None if self.half is None else self.half[:, i]
        return Trajectory(self.grid, self.tg, self.data[:, i], self.role, half)


@dataclass
class StateRunReport:
    """Per-snapshot diagnostics; every series has ``steps + 1`` entries along axis 0."""

    times: np.ndarray
    u_l2sq: np.ndarray
    u_grad_sq: np.ndarray
    u_A_sq: np.ndarray
    u_A32_sq: np.ndarray
    v_aL4_4: np.ndarray
    energy_residual: np.ndarray
    extra: dict = field(default_factory=dict)

    def columns(self) -> dict:
        cols = {
            "t": self.times,
            "u_l2sq": self.u_l2sq,
            "u_grad_sq": self.u_grad_sq,
            "u_A_sq": self.u_A_sq,
            "u_A32_sq": self.u_A32_sq,
            "v_aL4_4": self.v_aL4_4,
            "energy_residual": self.energy_residual,
        }
        cols.update(self.extra)
        return cols


def _series(f, tg: TimeGrid) -> np.ndarray | None:
    """Accept None, a Control-like object with ``.data``, or an array of snapshots."""
    if f is None:
        return None
    arr = np.asarray(getattr(f, "data", f))
    if arr.shape[0] != tg.steps + 1:
        raise ValueError(f"forcing has {arr.shape[0]} snapshots, expected {tg.steps + 1}")
    return arr


def z_source_multiplier(grid: TorusGrid, p: FluidParams, theta: float) -> np.ndarray:
    """Symbol of ``1 + (theta + a1 - nu) A + theta a1 A^2`` acting on z."""
    k2 = grid.k2
    return 1.0 + (theta + p.alpha1 - p.nu) * k2 + theta * p.alpha1 * k2**2


def noise_trajectory(spec: NoiseSpec, grid: TorusGrid, a1: float, tg: TimeGrid,
                     samples: int | list[int] = 1, substeps: int = 1):
    """OU component for a batch of sample indices with the matching Wiener increments.

    ``samples`` is a count (indices ``0..S-1``) or an explicit index list.
    Returns ``(z, dW)`` where ``z`` carries exact half-step values.
    """
    idx = list(range(samples)) if isinstance(samples, int) else list(samples)
    zs, ws = [], []
    for i in idx:
        zh, dw = ou_path(NoisePath(spec, i), grid, a1, tg.dt, tg.steps, substeps)
        zs.append(zh)
        ws.append(dw)
    zh = np.stack(zs, axis=1)
    dW = np.stack(ws, axis=1)
    return Trajectory(grid, tg, zh[0::2].copy(), Role.noise_z, zh), dW


def _check_solenoidal(c: np.ndarray, grid: TorusGrid, what: str):
    kc = np.abs((grid.kvec * c).sum(axis=-3)).max()
    if kc > 1e-10 * max(np.abs(c).max() * np.sqrt(grid.k2.max()), 1e-300):
        raise ValueError(f"{what} is not divergence-free")


def solve_state(v0: SpectralField, f, z: Trajectory | None, p: FluidParams, tg: TimeGrid,
                theta: float = 1.0, failed: np.ndarray | None = None,
                with_report: bool = True):
    """Advance the u-equation from ``u(0) = v0``; returns ``(u, report)``.

    ``z`` may be None (no noise) or a batched noise trajectory; ``f`` is a
    control or snapshot array on ``tg`` (None for zero forcing).  ``theta`` is
    the OU damping used when generating z.
    """
    g = v0.grid
    _check_solenoidal(v0.coeff, g, "initial velocity")
    Ups = upsilon_mult(g, p.alpha1)
    decay = p.nu * g.k2 / Ups
    fs = _series(f, tg)
    Pf = None if fs is None else leray(g, with_midpoints(fs))
    zsrc = None
    zh = None
    if z is not None:
        zh = z.half_series()
        zsrc = z_source_multiplier(g, p, theta) * zh
    batch = () if z is None else z.batch_shape
    u0 = np.broadcast_to(v0.coeff, batch + v0.coeff.shape[-3:]).astype(complex)

    def rhs(j, u):
        v = u if zh is None else u + zh[j]
        r = -nonlinear_G(g, v, p)
        if Pf is not None:
            r = r + Pf[j]
        if zsrc is not None:
            r = r + zsrc[j]
        return r / Ups

    data = lawson_rk4(decay, rhs, u0, tg.steps, tg.dt, "state u", failed)
    u = Trajectory(g, tg, data, Role.state_u)
    report = state_report(u, z, fs, p, tg, theta) if with_report else None
    return u, report


def state_report(u: Trajectory, z: Trajectory | None, fs, p: FluidParams, tg: TimeGrid,
                 theta: float = 1.0) -> StateRunReport:
    g = u.grid
    c = u.data
    v = c if z is None else c + z.data
    res = energy_audit(u, z, fs, p, tg, theta)
    return StateRunReport(
        times=tg.times,
        u_l2sq=l2sq(g, c),
        u_grad_sq=hs_sq(g, c, 1.0),
        u_A_sq=hs_sq(g, c, 2.0),
        u_A32_sq=hs_sq(g, c, 3.0),
        v_aL4_4=aL4_4(g, v),
        energy_residual=np.concatenate([np.zeros((1,) + res.shape[1:]), res]),
    )


def solve_state_direct(v0: SpectralField, f, noise, p: FluidParams, tg: TimeGrid,
                       theta: float = 1.0) -> Trajectory:
    """Semi-implicit Euler-Maruyama on the undecomposed velocity equation.

    ``noise`` is a NoisePath, an array of Wiener increments of shape
    ``(steps, ..., 2, N, N)``, or None.  Viscosity and the mass operator are
    implicit; the nonlinear terms and forcing are explicit.
    """
    g = v0.grid
    Ups = upsilon_mult(g, p.alpha1)
    den = Ups + tg.dt * p.nu * g.k2
    fs = _series(f, tg)
    if isinstance(noise, NoisePath):
        _, dW = ou_path(NoisePath(noise.spec, noise.sample_index), g, p.alpha1, tg.dt, tg.steps)
    else:
        dW = noise
    batch = () if dW is None else dW.shape[1:-3]
    v = np.broadcast_to(v0.coeff, batch + v0.coeff.shape[-3:]).astype(complex)
    out = np.empty((tg.steps + 1,) + v.shape, dtype=complex)
    out[0] = v
    for n in range(tg.steps):
        with np.errstate(over="ignore", invalid="ignore"):
            r = Ups * v - tg.dt * nonlinear_G(g, v, p)
        if fs is not None:
            r = r + tg.dt * leray(g, fs[n])
        if dW is not None:
            r = r + dW[n]
        v = r / den * g.mask
        if not np.isfinite(v).all():
            raise NonFiniteError(n + 1, "direct state v")
        out[n + 1] = v
    return Trajectory(g, tg, out, Role.state_v)


def reconstruct_v(u: Trajectory, z: Trajectory | None) -> Trajectory:
    if z is None:
        return Trajectory(u.grid, u.tg, u.data.copy(), Role.state_v)
    if u.grid != z.grid or u.tg != z.tg:
        raise ValueError("u and z live on different grids")
    return Trajectory(u.grid, u.tg, u.data + z.data, Role.state_v)


# ---------------------------------------------------------------------------
# energy balance
# ---------------------------------------------------------------------------

def _b(g: TorusGrid, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    integrand = (advect(g.to_physical(a), grad_phys(g, b)) * g.to_physical(c)).sum(axis=-3)
    return quad(g, integrand)


def energy_terms(grid: TorusGrid, u: np.ndarray, z: np.ndarray | None, f: np.ndarray | None,
                 p: FluidParams, theta: float = 1.0) -> dict:
    """Split of ``d/dt 1/2(|u|^2 + a1 |grad u|^2)`` into labelled contributions.

    Keys ``dissipation``, ``aL4``, ``I1`` .. ``I7`` sum (with the signs in
    ``total_split``) to ``total``, which is computed directly as ``(Y u', u)``.
    """
    g = grid
    a1, a2, nu, beta = p.alpha1, p.alpha2, p.nu, p.beta
    zz = np.zeros_like(u) if z is None else z
    v = u + zz
    total = -nu * hs_sq(g, u, 1.0) - dot_spec(g, nonlinear_G(g, v, p), u)
    I7 = dot_spec(g, z_source_multiplier(g, p, theta) * zz, u)
    if f is not None:
        I7 = I7 + dot_spec(g, leray(g, f), u)
    total = total + I7
    Av = sym(grad_phys(g, v))
    Au = sym(grad_phys(g, u))
    Az = sym(grad_phys(g, zz))
    nAv = ddot(Av, Av)
    terms = {
        "dissipation": -nu * hs_sq(g, u, 1.0),
        "aL4": -0.5 * beta * quad(g, nAv**2),
        "I1": a1 * _b(g, zz, u, g.k2 * u),
        "I2": _b(g, zz, u, upsilon_mult(g, a1) * zz),
        "I3": _b(g, u, zz, u),
        "I4": a1 * _b(g, u, zz, g.k2 * v),
        "I5": 0.5 * (a1 + a2) * quad(g, ddot(matmul(Av, Av), Au)),
        "I6": 0.5 * beta * quad(g, nAv * ddot(Av, Az)),
        "I7": I7,
    }
    t = terms
    terms["total_split"] = (t["dissipation"] + t["aL4"] + t["I1"] + t["I2"] - t["I3"] - t["I4"]
                            - t["I5"] + t["I6"] + t["I7"])
    terms["total"] = total
    return terms


def _energy(g: TorusGrid, u: np.ndarray, a1: float) -> np.ndarray:
    return 0.5 * (l2sq(g, u) + a1 * hs_sq(g, u, 1.0))


def energy_audit(u: Trajectory, z: Trajectory | None, f, p: FluidParams, tg: TimeGrid,
                 theta: float = 1.0) -> np.ndarray:
    """Per-step residual of the discrete energy balance in rate form.

    ``res_n = (E_{n+1} - E_n)/dt - (R_n + 4 R_mid + R_{n+1})/6`` where R is the
    exact energy rate and the midpoint state is the cubic Hermite interpolant
    of the stored snapshots.  For a fourth-order integrator the residual
    decays like ``dt**4``.  Returns ``steps`` values.
    """
    g = u.grid
    a1 = p.alpha1
    fs = _series(f, tg)
    fh = None if fs is None else with_midpoints(fs)
    zh = None if z is None else z.half_series()
    Ups = upsilon_mult(g, a1)
    zsrc_mult = z_source_multiplier(g, p, theta)
    dt = tg.dt

    def rate_and_deriv(c, j):
        zj = None if zh is None else zh[j]
        v = c if zj is None else c + zj
        r = -p.nu * g.k2 * c - nonlinear_G(g, v, p)
        if zj is not None:
            r = r + zsrc_mult * zj
        if fh is not None:
            r = r + leray(g, fh[j])
        return dot_spec(g, r, c), r / Ups

    E = _energy(g, u.data, a1)
    R = np.empty(E.shape)
    D = np.empty(u.data.shape, dtype=complex)
    for n in range(tg.steps + 1):
        R[n], D[n] = rate_and_deriv(u.data[n], 2 * n)
    res = np.empty((tg.steps,) + E.shape[1:])
    for n in range(tg.steps):
        umid = 0.5 * (u.data[n] + u.data[n + 1]) + dt / 8 * (D[n] - D[n + 1])
        Rm, _ = rate_and_deriv(umid, 2 * n + 1)
        res[n] = (E[n + 1] - E[n]) / dt - (R[n] + 4 * Rm + R[n + 1]) / 6
    return res
