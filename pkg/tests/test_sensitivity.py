import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_field
from oracles import ShearModeOracle, shear_coeffs, shear_field
from thirdgrade import (
    FluidParams,
    FrozenState,
    Role,
    SpectralField,
    TimeGrid,
    TorusGrid,
    Trajectory,
    adjoint_rhs,
    duality_residual,
    linearized_rhs,
    solve_adjoint,
    solve_linearized,
    solve_state,
    state_rhs_G,
)
from thirdgrade.sensitivity import time_inner
from thirdgrade.spectral import inner


@pytest.fixture
def frozen(grid8, params, rng):
    v0 = random_field(grid8, rng, amplitude=1.0)
    tg = TimeGrid(0.4, 40)
    u, _ = solve_state(v0, None, None, params, tg, with_report=False)
    return FrozenState.from_state(u, None, params)


def smooth_series(grid, tg, rng):
    t = tg.times[:, None, None, None]
    return grid.random_field(rng, 3) * np.cos(2 * t) + grid.random_field(rng, 3) * t


class TestOperators:
    def test_zero(self, grid8, params, rng):
        v = random_field(grid8, rng)
        z = SpectralField.zeros(grid8)
        assert not linearized_rhs(z, v, None, params).coeff.any()
        assert not adjoint_rhs(z, v, None, params).coeff.any()

    def test_linearity(self, grid16, params, rng):
        v, m1, m2, psi = (random_field(grid16, rng, band=5) for _ in range(4))
        r = lambda m: linearized_rhs(m, v, psi, params).coeff
        lhs = r(m1 + m2)
        rhs = r(m1) + r(m2) - r(SpectralField.zeros(grid16))
        assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(lhs).max()
        a = lambda p: adjoint_rhs(p, v, None, params).coeff
        assert np.abs(a(2.5 * m1) - 2.5 * a(m1)).max() <= 1e-12 * np.abs(a(m1)).max()

    def test_directional_derivative(self, grid16, params, rng):
        u, z, m = (random_field(grid16, rng, band=4) for _ in range(3))
        # the linearized right-hand side is minus the derivative of G
        target = -linearized_rhs(m, u + z, None, params).coeff
        errs = []
        for eps in (1e-2, 1e-3, 1e-4):
            d = (state_rhs_G(u + eps * m, z, params) - state_rhs_G(u, z, params)).coeff / eps
            errs.append(np.abs(d - target).max() / np.abs(target).max())
        assert errs[0] / errs[1] == pytest.approx(10, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(10, rel=0.1)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), band=st.integers(2, 7))
    def test_adjoint_pairing(self, seed, band):
        g = TorusGrid(L=2 * math.pi, N=16)
        nu, a1, beta = 0.1, 0.2, 0.1
        p = FluidParams(nu, a1, -a1 + 0.5 * math.sqrt(24 * nu * beta), beta)
        r = np.random.default_rng(seed)
        v, m, q = (random_field(g, r, band=band) for _ in range(3))
        lhs = inner(linearized_rhs(m, v, None, p), q)
        rhs = inner(m, adjoint_rhs(q, v, None, p))
        assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-12)


class TestSolves:
    def test_zero_forcing(self, frozen):
        assert not solve_linearized(frozen, None).data.any()
        assert not solve_adjoint(frozen, None).data.any()

    def test_scaling_and_superposition(self, frozen, rng):
        g, tg = frozen.grid, frozen.tg
        a, b = smooth_series(g, tg, rng), smooth_series(g, tg, rng)
        for solve in (solve_linearized, solve_adjoint):
            x = solve(frozen, a).data
            assert np.abs(solve(frozen, 2 * a).data - 2 * x).max() <= 1e-10 * np.abs(x).max()
            s = solve(frozen, a + b).data
            assert np.abs(s - x - solve(frozen, b).data).max() <= 1e-10 * np.abs(s).max()

    def test_boundary_values(self, frozen, rng):
        g, tg = frozen.grid, frozen.tg
        assert not solve_linearized(frozen, smooth_series(g, tg, rng)).data[0].any()
        p = solve_adjoint(frozen, smooth_series(g, tg, rng))
        assert not p.data[-1].any()
        assert p.role == Role.adjoint_p

    def test_solenoidal_hermitian(self, frozen, rng):
        g, tg = frozen.grid, frozen.tg
        ni, nj = g.neg_index
        for tr in (solve_linearized(frozen, smooth_series(g, tg, rng)), solve_adjoint(frozen, smooth_series(g, tg, rng))):
            assert np.abs(tr.data - tr.data[..., ni, nj].conj()).max() < 1e-12
            assert np.abs((g.kvec * tr.data).sum(axis=-3)).max() < 1e-12

    def test_time_reversal_involution(self, frozen):
        d = frozen.v.data
        assert np.array_equal(d[::-1][::-1], d)

    def test_batched_forcing(self, frozen, rng):
        g, tg = frozen.grid, frozen.tg
        a, b = smooth_series(g, tg, rng), smooth_series(g, tg, rng)
        both = solve_adjoint(frozen, np.stack([a, b], axis=1)).data
        assert np.allclose(both[:, 1], solve_adjoint(frozen, b).data, rtol=0, atol=1e-14)

    def test_duality_zero(self, frozen, rng):
        g, tg = frozen.grid, frozen.tg
        d = duality_residual(frozen, np.zeros((tg.steps + 1, 2, g.N, g.N), complex), smooth_series(g, tg, rng))
        assert d["lhs"] == 0 and d["rhs"] == 0 and d["rel_residual"] == 0

    def test_duality_refinement(self, grid8, params, rng):
        v0 = random_field(grid8, rng, amplitude=1.0)
        base = [grid8.random_field(rng, 3) for _ in range(3)]
        rels = []
        for steps in (25, 50, 100):
            tg = TimeGrid(0.5, steps)
            u, _ = solve_state(v0, None, None, params, tg, with_report=False)
            fs = FrozenState.from_state(u, None, params)
            t = tg.times[:, None, None, None]
            rels.append(float(duality_residual(fs, base[0] * np.cos(3 * t), base[1] + base[2] * t)["rel_residual"]))
        assert rels[0] > rels[1] > rels[2]
        assert math.log2(rels[0] / rels[2]) / 2 >= 1


def _shear_runs(nu, a1, beta, T):
    o = ShearModeOracle(nu, a1, beta)
    forcing = lambda t: np.array([0.3 * np.cos(t), 0.2])
    psi = lambda t: np.array([np.cos(2 * t), 0.5 * t])
    gfun = lambda t: np.array([np.sin(3 * t) + 0.2, -0.3])
    y, m, p = o.solve([0.7, -0.4], forcing, psi, gfun, T)
    grid = TorusGrid(L=2 * math.pi, N=8, modes=((1, 0),))
    P = FluidParams(nu, a1, -a1, beta)
    tg = TimeGrid(T, 1000)
    t = tg.times
    F = shear_field(np.array([forcing(s) for s in t]), 8)
    v0 = SpectralField(grid, shear_field([0.7, -0.4], 8), True)
    u, _ = solve_state(v0, F, None, P, tg, with_report=False)
    fs = FrozenState.from_state(u, None, P)
    PS = shear_field(np.array([psi(s) for s in t]), 8)
    G = shear_field(np.array([gfun(s) for s in t]), 8)
    d = duality_residual(fs, PS, G)
    oracle = dict(y=y, m=m, p=p, duality=o.duality_sides(psi, gfun, m, p, T))
    return dict(t=t, u=u, d=d, oracle=oracle)


@pytest.fixture(scope="module")
def runs():
    return _shear_runs(nu=0.1, a1=0.2, beta=0.5, T=1.0)


class TestShearOracle:
    def test_closed_form_projection(self):
        for a, b in [(0.7, -0.4), (1.3, 0.2), (0.0, 2.0)]:
            ref = -1.5 * (a * a + b * b) * np.array([a, b])
            assert np.allclose(ShearModeOracle.cubic_projection_quadrature(a, b), ref, atol=1e-13)

    def test_state_matches(self, runs):
        ref = np.array([runs["oracle"]["y"](s) for s in runs["t"]])
        assert np.abs(shear_coeffs(runs["u"].data, 8) - ref).max() < 1e-6

    @pytest.mark.parametrize("key", ["m", "p"])
    def test_sensitivity_matches(self, runs, key):
        ref = np.array([runs["oracle"][key](s) for s in runs["t"]])
        assert np.abs(shear_coeffs(runs["d"][key].data, 8) - ref).max() < 1e-6

    def test_duality(self, runs):
        lhs, rhs = runs["oracle"]["duality"]
        assert abs(lhs - rhs) / abs(lhs) < 1e-10
        assert float(runs["d"]["rel_residual"]) <= 1e-6
        # pairing of coefficient pairs is scaled by the area factor 2 pi^2
        assert float(runs["d"]["lhs"]) / (2 * math.pi**2) == pytest.approx(lhs, rel=1e-6)


def test_time_inner_trapezoid(grid8, rng):
    tg = TimeGrid(2.0, 4)
    a = grid8.random_field(rng, 3, 0.0, 1.0)
    series = np.broadcast_to(a, (5,) + a.shape)
    assert float(time_inner(grid8, tg, series, series)) == pytest.approx(2.0, rel=1e-14)
