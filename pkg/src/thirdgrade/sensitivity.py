"""Linearized and adjoint solves along a frozen velocity trajectory.

Both equations carry the mass operator ``Y = 1 + alpha1 A`` on the time
derivative:

* linearized: ``Y m' = L_v m + P psi`` with ``m(0) = 0``;
* adjoint: ``-Y p' = L*_v p + P g`` with ``p(T) = 0``, solved forward in the
  reversed time ``q(t) = p(T - t)``.

``L*_v`` is the L2-adjoint of ``L_v`` on divergence-free fields, so the pair
satisfies ``int (psi, p) dt = int (g, m) dt`` up to discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    FluidParams,
    SpectralField,
    TorusGrid,
    advect,
    cotransport,
    ddot,
    div_tensor,
    dot_spec,
    grad_phys,
    leray,
    matmul,
    sym,
    upsilon_mult,
)
from .state import Role, TimeGrid, Trajectory
from .timestepping import lawson_rk4, with_midpoints

__all__ = [
    "FrozenState",
    "linearized_rhs",
    "adjoint_rhs",
    "solve_linearized",
    "solve_adjoint",
    "duality_residual",
    "time_inner",
]


class _VFactors:
    """Physical-space factors of a fixed velocity that both operators reuse."""

    def __init__(self, g: TorusGrid, v: np.ndarray, a1: float):
        Yv = upsilon_mult(g, a1) * v
        self.vp = g.to_physical(v)
        self.Yvp = g.to_physical(Yv)
        self.gv = grad_phys(g, v)
        self.gYv = grad_phys(g, Yv)
        self.Av = sym(self.gv)
        self.nAv = ddot(self.Av, self.Av)


def _stress_derivative(f: _VFactors, Aw: np.ndarray, p: FluidParams) -> np.ndarray:
    """Derivative of ``(a1+a2) A^2 + beta |A|^2 A`` at ``A(v)`` in direction ``A(w)``."""
    Av = f.Av
    S = (p.alpha1 + p.alpha2) * (matmul(Av, Aw) + matmul(Aw, Av))
    S = S + p.beta * f.nAv[..., None, None, :, :] * Aw
    S = S + 2 * p.beta * ddot(Aw, Av)[..., None, None, :, :] * Av
    return S


def _lin_apply(g: TorusGrid, f: _VFactors, m: np.ndarray, p: FluidParams) -> np.ndarray:
    Ym = upsilon_mult(g, p.alpha1) * m
    mp = g.to_physical(m)
    Ymp = g.to_physical(Ym)
    gm = grad_phys(g, m)
    gYm = grad_phys(g, Ym)
    tr = advect(f.vp, gYm) + advect(mp, f.gYv) + cotransport(Ymp, f.gv) + cotransport(f.Yvp, gm)
    S = _stress_derivative(f, sym(gm), p)
    return leray(g, div_tensor(g, S) - g.to_spectral(tr)) - p.nu * g.k2 * m


def _adj_apply(g: TorusGrid, f: _VFactors, q: np.ndarray, p: FluidParams) -> np.ndarray:
    Ups = upsilon_mult(g, p.alpha1)
    qp = g.to_physical(q)
    gq = grad_phys(g, q)
    ups_part = g.to_spectral(advect(f.vp, gq) - advect(qp, f.gv))
    plain = g.to_spectral(advect(qp, f.gYv) - cotransport(qp, f.gYv))
    S = _stress_derivative(f, sym(gq), p)
    return leray(g, Ups * ups_part + plain + div_tensor(g, S)) - p.nu * g.k2 * q


def linearized_rhs(m: SpectralField, v: SpectralField, psi: SpectralField | None,
                   p: FluidParams) -> SpectralField:
    """Projected right-hand side for ``Y m'``, viscous term included."""
    g = m.grid
    out = _lin_apply(g, _VFactors(g, v.coeff, p.alpha1), m.coeff, p)
    if psi is not None:
        out = out + leray(g, psi.coeff)
    return m.with_coeff(out, True)


def adjoint_rhs(p_field: SpectralField, v: SpectralField, g_field: SpectralField | None,
                params: FluidParams) -> SpectralField:
    """Projected right-hand side for ``-Y p'``, viscous term included."""
    g = p_field.grid
    out = _adj_apply(g, _VFactors(g, v.coeff, params.alpha1), p_field.coeff, params)
    if g_field is not None:
        out = out + leray(g, g_field.coeff)
    return p_field.with_coeff(out, True)


@dataclass(eq=False)
class FrozenState:
    """Velocity trajectory held fixed while solving sensitivity equations.

    ``v_half`` holds the velocity on the half-step lattice.  ``from_state``
    builds it from the smooth part u (cubic midpoints) plus the exact OU
    half-step values; otherwise the snapshots of v are interpolated directly.
    """

    v: Trajectory
    params: FluidParams
    v_half: np.ndarray | None = None

    def __post_init__(self):
        if self.v_half is None:
            self.v_half = self.v.half_series()

    @property
    def tg(self) -> TimeGrid:
        return self.v.tg

    @property
    def grid(self) -> TorusGrid:
        return self.v.grid

    @classmethod
    def from_state(cls, u: Trajectory, z: Trajectory | None, params: FluidParams) -> "FrozenState":
        uh = with_midpoints(u.data)
        if z is None:
            return cls(Trajectory(u.grid, u.tg, u.data.copy(), Role.state_v), params, uh)
        vh = uh + z.half_series()
        return cls(Trajectory(u.grid, u.tg, u.data + z.data, Role.state_v), params, vh)


class _FactorCache:
    """Keeps the factors of the last few half-step indices (RK4 reuses them)."""

    def __init__(self, g: TorusGrid, series: np.ndarray, a1: float, size: int = 3):
        self.g, self.series, self.a1, self.size = g, series, a1, size
        self.store: dict[int, _VFactors] = {}

    def __call__(self, j: int) -> _VFactors:
        f = self.store.get(j)
        if f is None:
            if len(self.store) >= self.size:
                self.store.pop(min(self.store))
            f = self.store[j] = _VFactors(self.g, self.series[j], self.a1)
        return f


def _forcing_half(x, tg: TimeGrid, g: TorusGrid) -> np.ndarray | None:
    if x is None:
        return None
    arr = np.asarray(getattr(x, "data", x))
    if arr.shape[0] != tg.steps + 1:
        raise ValueError(f"forcing has {arr.shape[0]} snapshots, expected {tg.steps + 1}")
    return leray(g, with_midpoints(arr))


def _batch_shape(fs: FrozenState, forcing: np.ndarray | None) -> tuple:
    shape = fs.v.data.shape[1:]
    if forcing is not None:
        shape = np.broadcast_shapes(shape, forcing.shape[1:])
    return shape


def solve_linearized(fs: FrozenState, psi, failed: np.ndarray | None = None) -> Trajectory:
    """Forward solve with ``m(0) = 0``; ``psi`` is snapshots on the state time grid."""
    g, tg, p = fs.grid, fs.tg, fs.params
    Ups = upsilon_mult(g, p.alpha1)
    F = _forcing_half(psi, tg, g)
    cache = _FactorCache(g, fs.v_half, p.alpha1)

    def rhs(j, m):
        r = _lin_apply(g, cache(j), m, p) + p.nu * g.k2 * m
        if F is not None:
            r = r + F[j]
        return r / Ups

    m0 = np.zeros(_batch_shape(fs, F), dtype=complex)
    data = lawson_rk4(p.nu * g.k2 / Ups, rhs, m0, tg.steps, tg.dt, "linearized m", failed)
    return Trajectory(g, tg, data, Role.linearized_m)


def solve_adjoint(fs: FrozenState, g_forcing, failed: np.ndarray | None = None) -> Trajectory:
    """Backward solve with ``p(T) = 0`` via forward integration of ``q(t) = p(T - t)``."""
    g, tg, p = fs.grid, fs.tg, fs.params
    Ups = upsilon_mult(g, p.alpha1)
    G = _forcing_half(g_forcing, tg, g)
    Grev = None if G is None else G[::-1]
    cache = _FactorCache(g, fs.v_half[::-1], p.alpha1)

    def rhs(j, q):
        r = _adj_apply(g, cache(j), q, p) + p.nu * g.k2 * q
        if Grev is not None:
            r = r + Grev[j]
        return r / Ups

    q0 = np.zeros(_batch_shape(fs, G), dtype=complex)
    q = lawson_rk4(p.nu * g.k2 / Ups, rhs, q0, tg.steps, tg.dt, "adjoint p", failed)
    return Trajectory(g, tg, q[::-1].copy(), Role.adjoint_p)


def time_inner(grid: TorusGrid, tg: TimeGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``int_0^T (a(t), b(t)) dt`` by the trapezoidal rule; batch axes are kept."""
    vals = dot_spec(grid, a, b)
    w = np.full(tg.steps + 1, tg.dt)
    w[[0, -1]] = tg.dt / 2
    return np.tensordot(w, vals, axes=(0, 0))


def duality_residual(fs: FrozenState, psi, g_forcing, m: Trajectory | None = None,
                     p: Trajectory | None = None) -> dict:
    """Compare ``int (psi, p)`` with ``int (g, m)``; solves m and p if not supplied."""
    grid, tg = fs.grid, fs.tg
    m = solve_linearized(fs, psi) if m is None else m
    p = solve_adjoint(fs, g_forcing) if p is None else p
    lhs = time_inner(grid, tg, np.asarray(getattr(psi, "data", psi)), p.data)
    rhs = time_inner(grid, tg, np.asarray(getattr(g_forcing, "data", g_forcing)), m.data)
    rel = np.abs(lhs - rhs) / np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-30)
    return {"lhs": lhs, "rhs": rhs, "rel_residual": rel, "m": m, "p": p}
