import math

import numpy as np
import pytest

from conftest import random_field
from thirdgrade import (
    FluidParams,
    NoiseSpec,
    NonFiniteError,
    Role,
    SpectralField,
    TimeGrid,
    Trajectory,
    energy_audit,
    noise_trajectory,
    reconstruct_v,
    sample_stream,
    solve_state,
    solve_state_direct,
)
from thirdgrade.spectral import l2sq
from thirdgrade.state import energy_terms


class TestTypes:
    def test_timegrid(self):
        tg = TimeGrid(1.0, 8)
        assert tg.dt * tg.steps == tg.T
        assert len(tg.times) == 9
        with pytest.raises(ValueError):
            TimeGrid(1.0, 0)
        with pytest.raises(ValueError):
            TimeGrid(-1.0, 4)

    def test_trajectory_role_immutable(self, grid8):
        tr = Trajectory(grid8, TimeGrid(1.0, 2), np.zeros((3, 2, 8, 8), complex), Role.state_u)
        with pytest.raises(AttributeError):
            tr.role = Role.state_v

    def test_trajectory_length_checked(self, grid8):
        with pytest.raises(ValueError):
            Trajectory(grid8, TimeGrid(1.0, 2), np.zeros((4, 2, 8, 8), complex), Role.state_u)

    def test_non_solenoidal_start_rejected(self, grid8, params):
        v0 = SpectralField.from_modes(grid8, {(1, 0): (1.0, 0.0)})
        with pytest.raises(ValueError, match="divergence"):
            solve_state(v0, None, None, params, TimeGrid(1.0, 2))


class TestSolveState:
    def test_zero(self, grid8, params):
        u, rep = solve_state(SpectralField.zeros(grid8), None, None, params, TimeGrid(1.0, 5))
        assert not u.data.any()
        assert not rep.energy_residual.any()
        assert len(rep.u_l2sq) == 6

    def test_invariants_preserved(self, grid16, params, rng):
        v0 = random_field(grid16, rng, amplitude=2.0)
        spec = NoiseSpec(sigma=0.5, master_seed=1)
        tg = TimeGrid(0.2, 20)
        z, _ = noise_trajectory(spec, grid16, params.alpha1, tg, 1)
        u, _ = solve_state(v0, None, z, params, tg, spec.theta, with_report=False)
        ni, nj = grid16.neg_index
        assert np.abs(u.data - u.data[..., ni, nj].conj()).max() < 1e-12
        assert np.abs((grid16.kvec * u.data).sum(axis=-3)).max() < 1e-12
        assert not u.data[..., 0, 0].any()

    def test_energy_monotone(self, grid16, params, rng):
        v0 = random_field(grid16, rng, amplitude=2.0)
        _, rep = solve_state(v0, None, None, params, TimeGrid(0.5, 100))
        E = rep.u_l2sq + params.alpha1 * rep.u_grad_sq
        assert np.all(np.diff(E) <= 1e-10)

    def test_energy_residual_order(self, grid16, params, rng):
        v0 = random_field(grid16, rng, amplitude=2.0)
        res = []
        for steps in (10, 20, 40):
            _, rep = solve_state(v0, None, None, params, TimeGrid(0.4, steps))
            res.append(np.abs(rep.energy_residual).max())
        assert 12 < res[0] / res[1] < 20
        assert 12 < res[1] / res[2] < 20

    def test_fourth_order_convergence(self, grid16, params, rng):
        v0 = random_field(grid16, rng, amplitude=2.0)
        t = TimeGrid(0.5, 160).times[:, None, None, None]
        base = grid16.random_field(rng, 2)

        def run(steps):
            tg = TimeGrid(0.5, steps)
            f = base * np.cos(3 * tg.times)[:, None, None, None]
            u, _ = solve_state(v0, f, None, params, tg, with_report=False)
            return u.data[-1]

        ref = run(160)
        e1 = np.abs(run(10) - ref).max()
        e2 = np.abs(run(20) - ref).max()
        assert 12 < e1 / e2 < 20
        assert t.shape[0] == 161

    def test_nonfinite_reports_step(self, grid8):
        p = FluidParams(0.0, 0.0, 0.0, 1.0)
        v0 = random_field(grid8, np.random.default_rng(0), amplitude=50.0)
        with pytest.raises(NonFiniteError) as ei:
            solve_state(v0, None, None, p, TimeGrid(10.0, 10))
        assert 1 <= ei.value.step <= 10

    def test_partial_failure_flags_sample(self, grid8):
        p = FluidParams(0.0, 0.0, 0.0, 1.0)
        rng = np.random.default_rng(0)
        z = Trajectory(grid8, TimeGrid(10.0, 10), np.zeros((11, 2, 2, 8, 8), complex), Role.noise_z)
        z.data[:, 1] = grid8.random_field(rng, 3, 0.0, 50.0)
        failed = np.zeros(2, bool)
        u, _ = solve_state(SpectralField.zeros(grid8), None, z, p, TimeGrid(10.0, 10), failed=failed,
                           with_report=False)
        assert failed.tolist() == [False, True]
        assert np.isfinite(u.data).all()

    def test_bitwise_reproducible(self, grid8, params):
        spec = NoiseSpec(sigma=0.5, master_seed=77)
        tg = TimeGrid(0.5, 20)
        out = []
        for _ in range(2):
            v0 = random_field(grid8, np.random.default_rng(1))
            z, _ = noise_trajectory(spec, grid8, params.alpha1, tg, 2)
            u, _ = solve_state(v0, None, z, params, tg, spec.theta, with_report=False)
            out.append(u.data.tobytes())
        assert out[0] == out[1]


class TestReconstruct:
    def test_sums(self, grid8, rng):
        tg = TimeGrid(1.0, 3)
        u = Trajectory(grid8, tg, grid8.random_field(rng, 3, 0.0, 1.0, 4), Role.state_u)
        zero = Trajectory(grid8, tg, np.zeros_like(u.data), Role.noise_z)
        assert np.array_equal(reconstruct_v(u, zero).data, u.data)
        assert np.array_equal(reconstruct_v(u, None).data, u.data)
        z = Trajectory(grid8, tg, grid8.random_field(rng, 3, 0.0, 1.0, 4), Role.noise_z)
        uz = Trajectory(grid8, tg, np.zeros_like(u.data), Role.state_u)
        assert np.array_equal(reconstruct_v(uz, z).data, z.data)
        v = reconstruct_v(u, z)
        assert v.role == Role.state_v
        assert np.all(np.sqrt(l2sq(grid8, v.data)) <= np.sqrt(l2sq(grid8, u.data)) + np.sqrt(l2sq(grid8, z.data)) + 1e-14)

    def test_grid_mismatch(self, grid8, grid16):
        tg = TimeGrid(1.0, 1)
        u = Trajectory(grid8, tg, np.zeros((2, 2, 8, 8), complex), Role.state_u)
        z = Trajectory(grid16, tg, np.zeros((2, 2, 16, 16), complex), Role.noise_z)
        with pytest.raises(ValueError):
            reconstruct_v(u, z)


class TestEnergy:
    def test_split_sums_to_total(self, grid16, params, rng):
        u = grid16.random_field(rng, 4, 0.0, 1.5)
        z = grid16.random_field(rng, 4, 0.0, 0.7)
        f = grid16.random_field(rng, 4, 0.0, 0.3)
        t = energy_terms(grid16, u, z, f, params, theta=1.3)
        assert t["total_split"] == pytest.approx(t["total"], rel=1e-10)

    def test_split_without_noise(self, grid16, params, rng):
        u = grid16.random_field(rng, 4, 0.0, 1.5)
        t = energy_terms(grid16, u, None, None, params)
        assert t["total"] == pytest.approx(t["dissipation"] + t["aL4"], rel=1e-12)
        for k in ("I1", "I2", "I3", "I4", "I6", "I7"):
            assert abs(t[k]) < 1e-14

    def test_audit_zero(self, grid8, params):
        tg = TimeGrid(1.0, 4)
        u = Trajectory(grid8, tg, np.zeros((5, 2, 8, 8), complex), Role.state_u)
        assert not energy_audit(u, None, None, params, tg).any()


class TestDirect:
    def test_zero(self, grid8, params):
        v = solve_state_direct(SpectralField.zeros(grid8), None, sample_stream(NoiseSpec(sigma=0.0), 0),
                               params, TimeGrid(1.0, 4))
        assert not v.data.any()

    def test_first_order_agreement_without_noise(self, grid16, params, rng):
        v0 = random_field(grid16, rng, amplitude=1.0)
        errs = []
        for steps in (50, 100, 200):
            tg = TimeGrid(0.5, steps)
            u, _ = solve_state(v0, None, None, params, tg, with_report=False)
            v = solve_state_direct(v0, None, None, params, tg)
            errs.append(np.sqrt(l2sq(grid16, u.data[-1] - v.data[-1])))
        assert 1.7 < errs[0] / errs[1] < 2.3
        assert 1.7 < errs[1] / errs[2] < 2.3

    def test_noisy_agreement_improves(self, grid8, params, rng):
        v0 = random_field(grid8, rng, amplitude=0.5)
        spec = NoiseSpec(sigma=0.2, theta=1.0, master_seed=4)
        S, fine = 8, 160
        errs = []
        for steps in (20, 40, 80):
            tg = TimeGrid(0.5, steps)
            z, dW = noise_trajectory(spec, grid8, params.alpha1, tg, S, substeps=fine // steps)
            u, _ = solve_state(v0, None, z, params, tg, spec.theta, with_report=False)
            v = solve_state_direct(v0, None, dW, params, tg)
            d = u.data[-1] + z.data[-1] - v.data[-1]
            errs.append(np.sqrt(np.mean(l2sq(grid8, d))))
        assert errs[2] < errs[1] < errs[0]
        assert math.log2(errs[0] / errs[2]) / 2 >= 0.5
