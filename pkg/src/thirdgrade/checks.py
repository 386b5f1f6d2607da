"""Verification suites shared by the ``check`` command and the test-suite.

Each suite returns a list of :class:`CheckResult`; a result passes when the
measured quantity satisfies its tolerance in the stated direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import Control, ControlProblem, OptimizerOptions, gradient_estimate, optimize
from .forcing import NoisePath, NoiseSpec, ou_step
from .sensitivity import FrozenState, duality_residual, time_inner
from .spectral import (
    FluidParams,
    SpectralField,
    TorusGrid,
    aL4_4,
    check_transport_identity,
    ddot,
    dot_spec,
    inner,
    op_J,
    op_K,
    quad,
    rivlin_phys,
    trilinear_b,
    advect,
    grad_phys,
)
from .state import Role, TimeGrid, Trajectory, noise_trajectory, solve_state

__all__ = [
    "CheckResult",
    "invariant_suite",
    "identity_suite",
    "ou_stats_suite",
    "energy_suite",
    "duality_suite",
    "gradient_suite",
    "stability_suite",
    "inverse_crime_suite",
    "mc_monotone_suite",
    "loglog_slope",
]


@dataclass
class CheckResult:
    name: str
    measured: float
    tol: float
    passed: bool
    mode: str = "<="  # "<=" upper bound, ">=" lower bound, "in" interval (tol, tol_hi)
    tol_hi: float | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.mode == "in":
            bound = f"in [{self.tol:g}, {self.tol_hi:g}]"
        else:
            bound = f"{self.mode} {self.tol:g}"
        return f"{status}  {self.name}: {self.measured:.3e} ({bound})"


def _upper(name, val, tol) -> CheckResult:
    val = float(val)
    return CheckResult(name, val, tol, bool(val <= tol))


def _lower(name, val, tol) -> CheckResult:
    val = float(val)
    return CheckResult(name, val, tol, bool(val >= tol), ">=")


def _within(name, val, lo, hi) -> CheckResult:
    val = float(val)
    return CheckResult(name, val, lo, bool(lo <= val <= hi), "in", hi)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def energy_params() -> FluidParams:
    """Reference parameters sitting at half the thermodynamic bound."""
    nu, a1, beta = 0.1, 0.2, 0.1
    return FluidParams(nu, a1, -a1 + 0.5 * math.sqrt(24 * nu * beta), beta)


def _fields(grid: TorusGrid, count: int, seed: int, band: int = 4) -> SpectralField:
    rng = np.random.default_rng(seed)
    return SpectralField(grid, grid.random_field(rng, band, 0.0, 1.0, count), True)


# ---------------------------------------------------------------------------
# operator identities
# ---------------------------------------------------------------------------

def _abs_b(g: TorusGrid, u, v, w) -> np.ndarray:
    integrand = (advect(g.to_physical(u), grad_phys(g, v)) * g.to_physical(w)).sum(axis=-3)
    return quad(g, np.abs(integrand))


def invariant_suite(grid: TorusGrid | None = None, params: FluidParams | None = None,
                    count: int = 100, seed: int = 0, band: int = 4) -> list[CheckResult]:
    """Trilinear skew-symmetry, the tensor-operator energy identities and the transport identity."""
    g = grid or TorusGrid(L=2 * math.pi, N=16)
    p = params or energy_params()
    u = _fields(g, count, seed, band)
    v = _fields(g, count, seed + 1, band)
    w = _fields(g, count, seed + 2, band)
    Av = v.with_coeff(g.k2 * v.coeff)

    b_uvv = np.abs(trilinear_b(u, v, v)) / _abs_b(g, u.coeff, v.coeff, v.coeff)
    skew = np.abs(trilinear_b(u, v, w) + trilinear_b(u, w, v)) / (
        _abs_b(g, u.coeff, v.coeff, w.coeff) + _abs_b(g, u.coeff, w.coeff, v.coeff))
    b_vvAv = np.abs(trilinear_b(v, v, Av)) / _abs_b(g, v.coeff, v.coeff, Av.coeff)

    q4 = aL4_4(g, v.coeff)
    K_rel = np.abs(inner(op_K(v), v) - 0.5 * q4) / (0.5 * q4)
    A = rivlin_phys(g, v.coeff)
    J_scale = quad(g, np.abs(ddot(A, A)) ** 1.5)
    J_rel = np.abs(inner(op_J(v), v)) / J_scale
    tr = check_transport_identity(v, p)
    return [
        _upper("b(u,v,v) = 0", b_uvv.max(), 1e-10),
        _upper("b(u,v,w) + b(u,w,v) = 0", skew.max(), 1e-10),
        _upper("b(v,v,Av) = 0", b_vvAv.max(), 1e-10),
        _upper("<K(v),v> = |A(v)|_4^4 / 2", K_rel.max(), 1e-8),
        _upper("<J(v),v> = 0", J_rel.max(), 1e-8),
        _upper("transport identity", np.max(tr), 1e-8),
    ]


def identity_suite(grid: TorusGrid | None = None, params: FluidParams | None = None,
                   count: int = 100, seed: int = 0) -> list[CheckResult]:
    g = grid or TorusGrid(L=2 * math.pi, N=16)
    p = params or energy_params()
    v = _fields(g, count, seed)
    return [_upper("transport identity", np.max(check_transport_identity(v, p)), 1e-8)]


# ---------------------------------------------------------------------------
# OU statistics
# ---------------------------------------------------------------------------

def default_ou_modes(grid: TorusGrid) -> list[tuple[int, int]]:
    cand = [(1, 0), (0, 1), (1, 1), (2, 1), (2, 2), (3, 0), (1, 3)]
    return [k for k in cand if grid.mask[k[0] % grid.N, k[1] % grid.N]][:5]


def ou_stats_suite(spec: NoiseSpec, grid: TorusGrid, dt: float = 0.1, steps: int = 100_000,
                   modes: list[tuple[int, int]] | None = None, sample_index: int = 0,
                   batches: int = 100) -> list[CheckResult]:
    """Stationary second moments and exact decay of the OU coefficients ``Y = (1 + a1 A) z``.

    The chain starts from its stationary law, so no burn-in is discarded.
    Standard errors come from batch means.
    """
    if spec.sigma <= 0:
        raise ValueError("OU statistics need sigma > 0")
    modes = modes or default_ou_modes(grid)
    idx = tuple(np.array([[k1 % grid.N for k1, _ in modes], [k2 % grid.N for _, k2 in modes]]))
    c = spec.variances(grid)[idx]
    mu = spec.decay_rates(grid)[idx]
    target = c / (2 * mu)
    path = NoisePath(spec, sample_index)
    rng = path.generator()
    # stationary start: one exact step of length "infinity" from zero
    Y = ou_step(SpectralField.zeros(grid), spec, 0.0, 1e6, path.blocks(grid, 1, rng)[0, 0])
    sq = np.empty((steps, len(modes)))
    chunk = 2048
    n = 0
    while n < steps:
        cnt = min(chunk, steps - n)
        xi = path.blocks(grid, cnt, rng)[:, 0]
        for i in range(cnt):
            Y = ou_step(Y, spec, 0.0, dt, xi[i])
            sq[n + i] = (np.abs(Y.coeff[(slice(None),) + idx]) ** 2).sum(axis=0)
        n += cnt
    bm = sq[: steps - steps % batches].reshape(batches, -1, len(modes)).mean(axis=1)
    est = bm.mean(axis=0)
    se = bm.std(axis=0, ddof=1) / math.sqrt(batches)
    out = []
    for j, k in enumerate(modes):
        z = abs(est[j] - target[j]) / se[j]
        out.append(_upper(f"OU variance mode {k} (|err|/SE)", z, 3.0))
    Yd = SpectralField(grid, grid.zeros())
    coeff = Yd.coeff.copy()
    coeff[1][idx] = 1.0
    Yn = ou_step(Yd.with_coeff(coeff), spec, 0.0, dt)
    err = np.abs(Yn.coeff[1][idx] - np.exp(-mu * dt)).max()
    out.append(_upper("OU deterministic decay exp(-mu dt)", err, 1e-12))
    return out


# ---------------------------------------------------------------------------
# energy law
# ---------------------------------------------------------------------------

def energy_suite(grid: TorusGrid | None = None, params: FluidParams | None = None,
                 seed: int = 3, amplitude: float = 2.0, band: int = 3,
                 T_ratio: float = 0.4, coarse_steps: int = 10) -> list[CheckResult]:
    """Unforced decay: residual order under halving and size at dt = 1e-3."""
    g = grid or TorusGrid(L=2 * math.pi, N=16)
    p = params or energy_params()
    rng = np.random.default_rng(seed)
    v0 = SpectralField(g, g.random_field(rng, band, 0.0, amplitude), True)
    res = []
    for steps in (coarse_steps, 2 * coarse_steps):
        _, rep = solve_state(v0, None, None, p, TimeGrid(T_ratio, steps))
        res.append(np.abs(rep.energy_residual).max())
    ratio = res[0] / res[1]
    _, rep = solve_state(v0, None, None, p, TimeGrid(0.1, 100))
    fine = np.abs(rep.energy_residual).max()
    dE = np.diff(0.5 * (rep.u_l2sq + p.alpha1 * rep.u_grad_sq))
    return [
        _within("energy residual halving ratio", ratio, 12.0, 20.0),
        _upper("energy residual at dt=1e-3", fine, 1e-8),
        _upper("energy non-increase (max step increase)", max(dE.max(), 0.0), 1e-10),
    ]


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------

def _smooth_forcing(grid: TorusGrid, tg: TimeGrid, rng: np.random.Generator, band: int = 3) -> np.ndarray:
    t = tg.times[:, None, None, None]
    a = grid.random_field(rng, band)
    b = grid.random_field(rng, band)
    w = rng.uniform(1.0, 4.0)
    return a * np.cos(w * t) + b * np.sin(0.5 * w * t)


def duality_suite(grid: TorusGrid | None = None, params: FluidParams | None = None,
                  noise: NoiseSpec | None = None, T: float = 0.5,
                  steps_list=(200, 400, 800), seed: int = 7) -> list[CheckResult]:
    """Pathwise duality ``int (psi, p) = int (g, m)`` on one stochastic path under refinement."""
    g = grid or TorusGrid(L=2 * math.pi, N=16)
    p = params or energy_params()
    noise = noise or NoiseSpec(sigma=0.05, theta=1.0, master_seed=seed)
    finest = max(steps_list)
    rng = np.random.default_rng(seed)
    v0 = SpectralField(g, g.random_field(rng, 3, 0.0, 1.0), True)
    psi_a, psi_b = g.random_field(rng, 3), g.random_field(rng, 3)
    g_a, g_b = g.random_field(rng, 3), g.random_field(rng, 3)
    rels = []
    for steps in steps_list:
        tg = TimeGrid(T, steps)
        z, _ = noise_trajectory(noise, g, p.alpha1, tg, 1, substeps=finest // steps)
        z = z.sample(0)
        u, _ = solve_state(v0, None, z, p, tg, noise.theta, with_report=False)
        fs = FrozenState.from_state(u, z, p)
        t = tg.times[:, None, None, None]
        psi = psi_a * np.cos(3 * t) + psi_b * t
        gf = g_a * np.sin(2 * t) + g_b
        rels.append(float(duality_residual(fs, psi, gf)["rel_residual"]))
    slope = -loglog_slope(steps_list, rels)
    return [
        _upper(f"duality residual at steps={finest}", rels[-1], 1e-3),
        _lower("duality refinement slope", slope, 1.0),
    ]


# ---------------------------------------------------------------------------
# Gateaux derivative and stability
# ---------------------------------------------------------------------------

def _deterministic_problem(grid, params, T, steps, lam, seed):
    rng = np.random.default_rng(seed)
    tg = TimeGrid(T, steps)
    v0 = SpectralField(grid, grid.random_field(rng, 3, 0.0, 1.0), True)
    t = tg.times[:, None, None, None]
    vd = grid.random_field(rng, 3, 0.0, 0.5) * np.cos(2 * t)
    vd = Trajectory(grid, tg, vd, Role.target_vd)
    f = Control(grid, tg, _smooth_forcing(grid, tg, rng))
    psi = _smooth_forcing(grid, tg, rng)
    pr = ControlProblem(grid, tg, v0, vd, lam, params)
    return pr, f, psi


def gradient_suite(grid: TorusGrid | None = None, params: FluidParams | None = None,
                   T: float = 0.2, steps: int = 200, lam: float = 0.1, seed: int = 11,
                   rhos=(1e-1, 1e-2, 1e-3), rho_fine: float = 1e-4) -> list[CheckResult]:
    """Finite-difference versus adjoint directional derivative of the cost."""
    g = grid or TorusGrid(L=2 * math.pi, N=16)
    p = params or energy_params()
    pr, f, psi = _deterministic_problem(g, p, T, steps, lam, seed)
    ge = gradient_estimate(pr, f)
    J0 = ge["J"]
    dd = float(time_inner(g, pr.tg, ge["grad"], psi))

    def gap(rho):
        Jr = pr.evaluate(f.with_data(f.data + rho * psi))["J"]
        return abs((Jr - J0) / rho - dd) / abs(dd)

    gaps = [gap(r) for r in rhos]
    slope = loglog_slope(rhos, gaps)
    return [
        _upper(f"Gateaux gap at rho={rho_fine:g}", gap(rho_fine), 1e-2),
        _within("Gateaux gap slope in rho", slope, 0.9, 1.1),
    ]


def stability_suite(grid: TorusGrid | None = None, params: FluidParams | None = None,
                    T: float = 0.5, steps: int = 100, delta: float = 1e-2, seed: int = 13) -> list[CheckResult]:
    """``sup_t |A(v1 - v2)|`` for perturbations delta and delta/2 of the control."""
    g = grid or TorusGrid(L=2 * math.pi, N=16)
    p = params or energy_params()
    pr, f, psi = _deterministic_problem(g, p, T, steps, 1.0, seed)
    _, v, _ = pr.solve(f)

    def sup_diff(d):
        _, v2, _ = pr.solve(f.with_data(f.data + d * psi))
        diff = v2 - v
        return float(np.sqrt(dot_spec(g, g.k2 * diff, g.k2 * diff)).max())

    ratio = sup_diff(delta) / sup_diff(delta / 2)
    return [_within(f"stability ratio at delta={delta:g}", ratio, 1.8, 2.2)]


# ---------------------------------------------------------------------------
# optimizer regression
# ---------------------------------------------------------------------------

def inverse_crime_suite(grid: TorusGrid | None = None, params: FluidParams | None = None,
                        T: float = 1.0, steps: int = 40, lam: float = 1e-6, max_iters: int = 200,
                        seed: int = 17) -> list[CheckResult]:
    """Recover a known control from the state it generates (sigma = 0)."""
    g = grid or TorusGrid(L=2 * math.pi, N=8)
    p = params or energy_params()
    rng = np.random.default_rng(seed)
    tg = TimeGrid(T, steps)
    v0 = SpectralField(g, g.random_field(rng, 2, 0.0, 0.5), True)
    f_star = Control(g, tg, _smooth_forcing(g, tg, rng, band=2))
    u, _ = solve_state(v0, f_star.projected(), None, p, tg, with_report=False)
    vd = Trajectory(g, tg, u.data, Role.target_vd)
    pr = ControlProblem(g, tg, v0, vd, lam, p)

    def tracking(f: Control) -> float:
        _, v, _ = pr.solve(f)
        d = v[:, 0] - vd.data
        return math.sqrt(max(float(time_inner(g, tg, d, d)), 0.0))

    e0 = tracking(Control.zeros(g, tg))
    st = optimize(pr, OptimizerOptions(max_iters=max_iters, rel_tol=1e-4))
    reduction = e0 / max(tracking(st.f), 1e-300)
    res_ratio = st.residual / st.history[0]["residual"]
    return [
        _lower(f"tracking error reduction in {st.iteration} iterations", reduction, 100.0),
        _upper("optimality residual / initial", res_ratio, 1e-3),
    ]


def mc_monotone_suite(grid: TorusGrid | None = None, params: FluidParams | None = None,
                      seeds=(0, 1, 2, 3, 4), samples: int = 32, iters: int = 5, T: float = 0.5,
                      steps: int = 25, sigma: float = 0.2) -> list[CheckResult]:
    """With common random numbers the sample-mean cost never increases on an accepted step."""
    g = grid or TorusGrid(L=2 * math.pi, N=8)
    p = params or energy_params()
    out = []
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        tg = TimeGrid(T, steps)
        v0 = SpectralField(g, g.random_field(rng, 2, 0.0, 0.5), True)
        vd = Trajectory(g, tg, _smooth_forcing(g, tg, rng, band=2) * 0.3, Role.target_vd)
        noise = NoiseSpec(sigma=sigma, master_seed=seed)
        pr = ControlProblem(g, tg, v0, vd, 0.1, p, noise, samples)
        J = np.array([row["J"] for row in optimize(pr, OptimizerOptions(max_iters=iters)).history])
        worst = float(np.max(np.diff(J))) if len(J) > 1 else 0.0
        out.append(_upper(f"max J increase, seed {seed}", worst, 0.0))
    return out
