"""Command-line entry point: ``thirdgrade {simulate,optimize,check} --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 non-finite solve,
4 line-search collapse, 5 a check failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checks
from .control import Control, ControlProblem, OptimizerOptions, StepCollapse, control_norm_H1, optimize
from .forcing import NoisePath, NoiseSpec, trace_diagnostics
from .io import ConfigError, RunConfig, TrajectoryFormatError, load_config, read_trajectory, write_trajectory
from .report import HISTORY_COLUMNS, render_figure, write_csv, write_plot_script
from .spectral import SpectralField, aL4_4, hs_sq, l2sq
from .state import Role, Trajectory, noise_trajectory, reconstruct_v, solve_state, solve_state_direct
from .timestepping import NonFiniteError

EXIT_CONFIG, EXIT_NONFINITE, EXIT_COLLAPSE, EXIT_FAIL = 2, 3, 4, 5


def _load_field_file(cfg: RunConfig, path: Path, roles: tuple[Role, ...], key: str) -> Trajectory:
    try:
        tr = read_trajectory(path)
    except OSError as e:
        raise ConfigError(key, f"cannot read {path}: {e.strerror}") from None
    except TrajectoryFormatError as e:
        raise ConfigError(key, str(e)) from None
    if tr.role not in roles:
        raise ConfigError(key, f"file role {tr.role.name} not accepted here")
    if tr.grid.N != cfg.grid.N or tr.grid.L != cfg.grid.L:
        raise ConfigError(key, "file grid does not match grid section")
    if tr.tg.steps != cfg.tg.steps or tr.tg.dt != cfg.tg.dt:
        raise ConfigError(key, "file time grid does not match time section")
    return Trajectory(cfg.grid, cfg.tg, tr.data, tr.role)


def initial_velocity(cfg: RunConfig) -> SpectralField:
    g, ini = cfg.grid, cfg.initial
    if ini.kind == "zero":
        return SpectralField.zeros(g)
    if ini.kind == "random":
        rng = np.random.default_rng(ini.seed)
        return SpectralField(g, g.random_field(rng, ini.band, 0.0, ini.amplitude), True)
    tr = _load_field_file(cfg, cfg.resolve(ini.file), tuple(Role), "initial.file")
    return SpectralField(g, tr.data[0], True)


def control_input(cfg: RunConfig) -> Control | None:
    g, tg = cfg.grid, cfg.tg
    if cfg.control_file:
        tr = _load_field_file(cfg, cfg.resolve(cfg.control_file), (Role.control_f,), "paths.control_file")
        return Control(g, tg, tr.data, cfg.radius_R)
    sc = cfg.synthetic_control
    if sc.amplitude == 0:
        return None
    rng = np.random.default_rng(sc.seed)
    base = g.random_field(rng, sc.band, 0.0, sc.amplitude)
    t = tg.times[:, None, None, None]
    return Control(g, tg, base * (1 + np.sin(sc.omega * t)), cfg.radius_R)


def _out_dir(cfg: RunConfig) -> Path:
    d = cfg.resolve(cfg.output_dir).resolve()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _announce(cfg: RunConfig):
    if cfg.theta_raised_from is not None:
        print(f"note: noise.theta raised from {cfg.theta_raised_from:g} to {cfg.noise.theta:.6g} "
              f"(minimum admissible for c_hat = {cfg.noise.c_hat:g})")
    if cfg.noise.sigma > 0:
        tr = trace_diagnostics(cfg.noise, cfg.grid)
        print(f"noise: tr(GG*) = {tr['tr_GG']:.6g}, op norm = {tr['op_norm']:.6g}")


def cmd_simulate(cfg: RunConfig, direct: bool, figures: bool) -> int:
    _announce(cfg)
    g, tg, p, spec = cfg.grid, cfg.tg, cfg.fluid, cfg.noise
    v0 = initial_velocity(cfg)
    f = control_input(cfg)
    out = _out_dir(cfg)
    fdata = None if f is None else f.projected()
    if f is not None:
        write_trajectory(out / "f.tgf", f.as_trajectory())
    if direct:
        noise = NoisePath(spec, 0) if spec.sigma > 0 else None
        v = solve_state_direct(v0, fdata, noise, p, tg, spec.theta)
        write_trajectory(out / "v_direct.tgf", v)
        cols = {"t": tg.times, "v_l2sq": l2sq(g, v.data), "v_grad_sq": hs_sq(g, v.data, 1.0),
                "v_aL4_4": aL4_4(g, v.data)}
    else:
        z = None
        if spec.sigma > 0:
            z, _ = noise_trajectory(spec, g, p.alpha1, tg, [0])
            z = z.sample(0)
        u, rep = solve_state(v0, fdata, z, p, tg, spec.theta)
        v = reconstruct_v(u, z)
        write_trajectory(out / "u.tgf", u)
        zt = z if z is not None else Trajectory(g, tg, np.zeros_like(u.data), Role.noise_z)
        write_trajectory(out / "z.tgf", Trajectory(g, tg, zt.data, Role.noise_z))
        write_trajectory(out / "v.tgf", v)
        cols = rep.columns()
        cols["energy"] = 0.5 * (rep.u_l2sq + p.alpha1 * rep.u_grad_sq)
    csv_path = out / ("report_direct.csv" if direct else "report.csv")
    write_csv(csv_path, cols)
    write_plot_script(csv_path, "t")
    if figures:
        render_figure(csv_path, "t")
    vl2 = l2sq(g, v.data)
    print(f"simulate: {tg.steps} steps, dt = {tg.dt:.6g}; |v(T)|_2^2 = {vl2[-1]:.6g}; wrote {out}")
    return 0


def build_problem(cfg: RunConfig) -> ControlProblem:
    g, tg = cfg.grid, cfg.tg
    if cfg.target_file:
        vd = _load_field_file(cfg, cfg.resolve(cfg.target_file), (Role.target_vd, Role.state_v), "paths.target_file")
        vd = Trajectory(g, tg, vd.data, Role.target_vd)
    else:
        vd = Trajectory(g, tg, np.zeros((tg.steps + 1, 2, g.N, g.N), dtype=complex), Role.target_vd)
    return ControlProblem(g, tg, initial_velocity(cfg), vd, cfg.lam, cfg.fluid, cfg.noise,
                          cfg.samples, cfg.radius_R)


def cmd_optimize(cfg: RunConfig, figures: bool, timing: bool) -> int:
    _announce(cfg)
    pr = build_problem(cfg)
    f0 = control_input(cfg) if cfg.control_file else None
    o = cfg.optimizer
    opts = OptimizerOptions(max_iters=o.max_iters, step0=o.step0, armijo_c=o.armijo_c,
                            tol_residual=o.tol_residual, rel_tol=o.rel_tol)
    st = optimize(pr, opts, f0)
    out = _out_dir(cfg)
    hist = {c: [] for c in HISTORY_COLUMNS}
    for row in st.history:
        for c in HISTORY_COLUMNS:
            hist[c].append(row[c] if (c != "wall_time" or timing) else 0.0)
    csv_path = out / "history.csv"
    write_csv(csv_path, hist)
    write_plot_script(csv_path, "iter")
    write_trajectory(out / "control_final.tgf", st.f.as_trajectory())
    if figures:
        render_figure(csv_path, "iter")
    print(f"optimize: {st.iteration} iterations, J = {st.J:.6g}, residual = {st.residual:.3e} "
          f"(initial {st.history[0]['residual']:.3e}), |f|_H1 = {control_norm_H1(st.f):.6g}, "
          f"converged = {st.converged}")
    return 0


def cmd_check(cfg: RunConfig, suite: str) -> int:
    g, tg, p, spec = cfg.grid, cfg.tg, cfg.fluid, cfg.noise
    if suite == "invariants":
        results = checks.invariant_suite(g, p) + checks.energy_suite(g, p)
    elif suite == "identity":
        results = checks.identity_suite(g, p)
    elif suite == "duality":
        noise = spec if spec.sigma > 0 else NoiseSpec(sigma=0.05, master_seed=spec.master_seed)
        results = checks.duality_suite(g, p, noise, tg.T, (tg.steps, 2 * tg.steps, 4 * tg.steps))
    elif suite == "gradient":
        results = checks.gradient_suite(g, p, tg.T, tg.steps, cfg.lam) + checks.stability_suite(g, p, tg.T, tg.steps)
    elif suite == "optimizer":
        results = checks.inverse_crime_suite(g, p, tg.T, tg.steps) + checks.mc_monotone_suite(g, p)
    elif suite == "ou-stats":
        noise = spec if spec.sigma > 0 else NoiseSpec(sigma=1.0, master_seed=spec.master_seed)
        results = checks.ou_stats_suite(noise, g)
    else:
        raise AssertionError(suite)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{suite}: {'all passed' if ok else 'FAILED'}")
    return 0 if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thirdgrade", description="Stochastic third-grade fluid toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a forward solve and write trajectories and a report")
    s.add_argument("--config", required=True)
    s.add_argument("--direct", action="store_true", help="use the Euler-Maruyama cross-check solver")
    s.add_argument("--figures", action="store_true", help="also render PNG figures")
    o = sub.add_parser("optimize", help="run the control optimizer")
    o.add_argument("--config", required=True)
    o.add_argument("--figures", action="store_true", help="also render PNG figures")
    o.add_argument("--timing", action="store_true", help="record wall-clock time in the history")
    c = sub.add_parser("check", help="run a verification suite")
    c.add_argument("suite", choices=["invariants", "identity", "duality", "gradient", "optimizer", "ou-stats"])
    c.add_argument("--config", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.direct, args.figures)
        if args.command == "optimize":
            return cmd_optimize(cfg, args.figures, args.timing)
        return cmd_check(cfg, args.suite)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NONFINITE
    except StepCollapse as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_COLLAPSE


if __name__ == "__main__":
    sys.exit(main())
