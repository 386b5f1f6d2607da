"""Velocity-tracking optimal control by Monte-Carlo projected gradient descent.

The cost is ``J(f) = 1/2 E int |v - v_d|^2 dt + lambda/2 int |f|^2 dt`` with a
deterministic control f.  The expectation is replaced by a fixed sample of
noise paths (sample indices ``0..S-1``) reused across all evaluations, so cost
differences between iterates carry no sampling noise.  The gradient in
``L2(0,T;L2)`` is ``P(mean(p) + lambda f)`` where p solves the adjoint
equation driven by ``v - v_d``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .forcing import NoiseSpec
from .sensitivity import FrozenState, solve_adjoint, time_inner
from .spectral import FluidParams, SpectralField, TorusGrid, hs_sq, leray
from .state import Role, TimeGrid, Trajectory, noise_trajectory, solve_state
from .timestepping import NonFiniteError

__all__ = [
    "Control",
    "ControlProblem",
    "OptimizerOptions",
    "OptimizerState",
    "StepCollapse",
    "cost_J",
    "gradient_estimate",
    "project_admissible",
    "optimize",
    "optimality_residual",
    "control_norm_H1",
]


class StepCollapse(RuntimeError):
    """Backtracking shrank the step below the floor without sufficient decrease."""


@dataclass(eq=False)
class Control:
    """Deterministic forcing snapshots ``data[n]`` on the problem's time grid."""

    grid: TorusGrid
    tg: TimeGrid
    data: np.ndarray
    radius: float = math.inf

    def __post_init__(self):
        if self.data.shape != (self.tg.steps + 1, 2, self.grid.N, self.grid.N):
            raise ValueError(f"control shape {self.data.shape} does not match grids")

    @classmethod
    def zeros(cls, grid: TorusGrid, tg: TimeGrid, radius: float = math.inf) -> "Control":
        return cls(grid, tg, np.zeros((tg.steps + 1, 2, grid.N, grid.N), dtype=complex), radius)

    def with_data(self, data: np.ndarray) -> "Control":
        return Control(self.grid, self.tg, data, self.radius)

    def projected(self) -> "Control":
        """Leray-projected copy; the state only sees the solenoidal part."""
        return self.with_data(leray(self.grid, self.data))

    def as_trajectory(self) -> Trajectory:
        return Trajectory(self.grid, self.tg, self.data, Role.control_f)


def control_norm_H1(f: Control) -> float:
    """``||f||_{L2(0,T; H1)}`` with the trapezoidal rule in time."""
    vals = hs_sq(f.grid, f.data, 1.0)
    w = np.full(f.tg.steps + 1, f.tg.dt)
    w[[0, -1]] = f.tg.dt / 2
    return float(math.sqrt(max(float(w @ vals), 0.0)))


def project_admissible(f: Control, R: float | None = None, method: str = "l2") -> Control:
    """Projection onto the closed ball of radius R in ``L2(0,T; H1)``.

    ``method="l2"`` (default) is the orthogonal projection in the
    ``L2(0,T; L2)`` metric, the one in which gradients are taken: each mode
    is shrunk by ``1 / (1 + mu kappa^2)`` with the scalar ``mu`` chosen so
    the result lies on the sphere.  ``method="radial"`` rescales the whole
    control, which is the projection in the H1 metric instead.
    """
    R = f.radius if R is None else R
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    nrm = control_norm_H1(f)
    if nrm <= R:
        return f
    if method == "radial":
        return f.with_data(f.data * (R / nrm))
    if method != "l2":
        raise ValueError(f"unknown projection method {method!r}")
    k2 = f.grid.k2 * f.grid.mask

    def shrunk(mu: float) -> np.ndarray:
        return f.data / (1.0 + mu * k2)

    def excess(mu: float) -> float:
        return control_norm_H1(f.with_data(shrunk(mu))) - R

    k2min = float(k2[k2 > 0].min())
    # at mu_hi every factor is at most R / nrm, so the norm is at most R
    mu_hi = (nrm / R - 1.0) / k2min
    mu = brentq(excess, 0.0, mu_hi, xtol=1e-15 * max(mu_hi, 1.0), rtol=4 * np.finfo(float).eps)
    out = shrunk(mu)
    # guard the last ulp so the iterate is admissible
    n_out = control_norm_H1(f.with_data(out))
    if n_out > R:
        out = out * (R / n_out)
    return f.with_data(out)


def optimality_residual(f: Control, grad: np.ndarray, R: float | None = None) -> float:
    """``||f - Proj(f - grad)||`` in ``L2(0,T; L2)``; zero exactly at stationary points."""
    g = np.asarray(getattr(grad, "data", grad))
    d = f.data - project_admissible(f.with_data(f.data - g), R).data
    return float(math.sqrt(max(float(time_inner(f.grid, f.tg, d, d)), 0.0)))


def _tracking(grid: TorusGrid, tg: TimeGrid, v: np.ndarray, vd: np.ndarray) -> np.ndarray:
    diff = v - vd
    return 0.5 * time_inner(grid, tg, diff, diff)


def cost_J(f: Control | None, v_samples, v_d: Trajectory, lam: float) -> dict:
    """Sample mean and standard error of the tracking cost plus the control penalty.

    ``v_samples`` is a Trajectory (possibly batched over samples) or a list of
    trajectories.
    """
    if isinstance(v_samples, Trajectory):
        v = v_samples.data
        if v.ndim == 4:
            v = v[:, None]
        grid, tg = v_samples.grid, v_samples.tg
    else:
        v = np.stack([s.data for s in v_samples], axis=1)
        grid, tg = v_samples[0].grid, v_samples[0].tg
    per = _tracking(grid, tg, v, v_d.data[:, None])
    pen = 0.0 if f is None else 0.5 * lam * float(time_inner(grid, tg, f.data, f.data))
    S = per.shape[0]
    se = float(per.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0
    return {"J": float(per.mean()) + pen, "stderr": se, "per_sample": per + pen, "penalty": pen}


@dataclass(eq=False)
class ControlProblem:
    """Everything fixed during an optimization run.

    With ``noise.sigma == 0`` the problem is deterministic and a single
    noiseless sample is used regardless of ``samples``.
    """

    grid: TorusGrid
    tg: TimeGrid
    v0: SpectralField
    v_d: Trajectory
    lam: float
    params: FluidParams
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    samples: int = 1
    radius: float = math.inf
    max_fail_fraction: float = 0.1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if self.v_d.tg != self.tg or self.v_d.grid != self.grid:
            raise ValueError("target trajectory is not on the problem grids")
        self._z = None

    @property
    def deterministic(self) -> bool:
        return self.noise.sigma == 0

    @property
    def z(self) -> Trajectory | None:
        """Common noise paths for all evaluations (generated once)."""
        if self.deterministic:
            return None
        if self._z is None:
            self._z, _ = noise_trajectory(self.noise, self.grid, self.params.alpha1, self.tg, self.samples)
        return self._z

    def solve(self, f: Control):
        """State solve for every sample; returns ``(u, v_data, failed_mask)``."""
        z = self.z
        nS = 1 if z is None else z.batch_shape[0]
        failed = np.zeros(nS, dtype=bool)
        fp = f.projected()
        if z is None:
            u, _ = solve_state(self.v0, fp, None, self.params, self.tg, self.noise.theta, with_report=False)
            v = u.data[:, None]
        else:
            u, _ = solve_state(self.v0, fp, z, self.params, self.tg, self.noise.theta,
                               failed=failed, with_report=False)
            v = u.data + z.data
        self._check_failures(failed)
        return u, v, failed

    def _check_failures(self, failed: np.ndarray):
        if failed.mean() > self.max_fail_fraction:
            raise NonFiniteError(-1, f"state ({int(failed.sum())} of {failed.size} samples)")

    def evaluate(self, f: Control) -> dict:
        _, v, failed = self.solve(f)
        keep = ~failed
        per = _tracking(self.grid, self.tg, v[:, keep], self.v_d.data[:, None])
        pen = 0.5 * self.lam * float(time_inner(self.grid, self.tg, f.data, f.data))
        S = per.shape[0]
        se = float(per.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0
        return {"J": float(per.mean()) + pen, "stderr": se, "failed": int(failed.sum())}


def gradient_estimate(problem: ControlProblem, f: Control) -> dict:
    """Adjoint gradient ``P(mean(p) + lambda f)`` with cost diagnostics."""
    pr = problem
    u, v, failed = pr.solve(f)
    keep = ~failed
    per = _tracking(pr.grid, pr.tg, v[:, keep], pr.v_d.data[:, None])
    pen = 0.5 * pr.lam * float(time_inner(pr.grid, pr.tg, f.data, f.data))
    z = pr.z
    if z is None:
        fs = FrozenState.from_state(u, None, pr.params)
        gforce = u.data - pr.v_d.data
        p = solve_adjoint(fs, gforce).data
        pmean = p
    else:
        fs = FrozenState.from_state(u, z, pr.params)
        gforce = v - pr.v_d.data[:, None]
        gforce[:, failed] = 0
        afail = failed.copy()
        p = solve_adjoint(fs, gforce, failed=afail).data
        pr._check_failures(afail)
        pmean = p[:, ~afail].mean(axis=1)
    grad = leray(pr.grid, pmean + pr.lam * f.data)
    S = per.shape[0]
    return {
        "grad": grad,
        "J": float(per.mean()) + pen,
        "stderr": float(per.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0,
        "per_sample": per + pen,
        "failed": int(failed.sum()),
        "v": v,
    }


@dataclass
class OptimizerOptions:
    max_iters: int = 200
    step0: float | None = None
    armijo_c: float = 1e-4
    tol_residual: float = 0.0
    rel_tol: float | None = None
    min_step: float = 1e-12
    bb: bool = True


@dataclass
class OptimizerState:
    f: Control
    iteration: int = 0
    J: float = math.nan
    stderr: float = 0.0
    grad: np.ndarray | None = None
    grad_norm: float = math.nan
    residual: float = math.nan
    step: float = math.nan
    history: list = field(default_factory=list)
    converged: bool = False

    def record(self, wall: float):
        self.history.append({
            "iter": self.iteration,
            "J": self.J,
            "stderr": self.stderr,
            "grad_norm": self.grad_norm,
            "residual": self.residual,
            "step": self.step,
            "wall_time": wall,
        })


def _norm(grid: TorusGrid, tg: TimeGrid, a: np.ndarray) -> float:
    return float(math.sqrt(max(float(time_inner(grid, tg, a, a)), 0.0)))


def optimize(problem: ControlProblem, opts: OptimizerOptions | None = None,
             f0: Control | None = None, callback=None) -> OptimizerState:
    """Projected gradient descent with Armijo backtracking and Barzilai-Borwein trial steps.

    Every accepted step satisfies the sufficient-decrease inequality on the
    fixed-sample cost estimate, so the recorded J history is non-increasing.
    """
    opts = opts or OptimizerOptions()
    pr = problem
    grid, tg = pr.grid, pr.tg
    f = (f0 or Control.zeros(grid, tg, pr.radius))
    f = project_admissible(Control(grid, tg, leray(grid, f.data), pr.radius))
    t0 = time.perf_counter()
    ge = gradient_estimate(pr, f)
    st = OptimizerState(f=f, J=ge["J"], stderr=ge["stderr"], grad=ge["grad"])
    st.grad_norm = _norm(grid, tg, st.grad)
    st.residual = optimality_residual(f, st.grad)
    res0 = st.residual
    step = opts.step0 if opts.step0 is not None else 1.0 / pr.lam
    st.step = 0.0
    st.record(time.perf_counter() - t0)
    if callback:
        callback(st)
    prev_f = prev_g = None

    def done() -> bool:
        if st.residual <= opts.tol_residual:
            return True
        return opts.rel_tol is not None and st.residual <= opts.rel_tol * res0

    while st.iteration < opts.max_iters and not done():
        if opts.bb and prev_f is not None:
            s = st.f.data - prev_f
            y = st.grad - prev_g
            sy = float(time_inner(grid, tg, s, y))
            if sy > 0:
                step = float(time_inner(grid, tg, s, s)) / sy
        while True:
            cand = project_admissible(st.f.with_data(st.f.data - step * st.grad))
            try:
                with np.errstate(all="ignore"):
                    Jc = pr.evaluate(cand)["J"]
            except NonFiniteError:
                Jc = math.inf
            decrease = float(time_inner(grid, tg, st.grad, cand.data - st.f.data))
            if Jc <= st.J + opts.armijo_c * decrease:
                break
            step *= 0.5
            if step < opts.min_step:
                raise StepCollapse(f"Armijo step fell below {opts.min_step:g} at iteration {st.iteration + 1}")
        prev_f, prev_g = st.f.data, st.grad
        ge = gradient_estimate(pr, cand)
        st.iteration += 1
        st.f = cand
        st.J, st.stderr, st.grad = ge["J"], ge["stderr"], ge["grad"]
        st.grad_norm = _norm(grid, tg, st.grad)
        st.residual = optimality_residual(cand, st.grad)
        st.step = step
        st.record(time.perf_counter() - t0)
        if callback:
            callback(st)
    st.converged = done()
    return st
