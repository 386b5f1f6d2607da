import json
import math

import numpy as np
import pytest

from thirdgrade import cli
from thirdgrade.checks import CheckResult
from thirdgrade.control import StepCollapse
from thirdgrade.io import read_trajectory
from thirdgrade.report import read_csv

FLUID = {"nu": 0.1, "alpha1": 0.2, "alpha2": -0.2 + 0.5 * math.sqrt(0.24), "beta": 0.1}


def write_config(tmp_path, name="c.json", **sections):
    doc = {"grid": {"L": 2 * math.pi, "N": 8}, "time": {"T": 0.2, "steps": 10}, "fluid": FLUID,
           "paths": {"output_dir": "out"}}
    for k, v in sections.items():
        doc[k] = doc.get(k, {}) | v
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


class TestSimulate:
    def test_zero_config_gives_zero(self, tmp_path):
        assert cli.main(["simulate", "--config", write_config(tmp_path)]) == 0
        out = tmp_path / "out"
        for name in ("u.tgf", "z.tgf", "v.tgf"):
            assert not read_trajectory(out / name).data.any()
        rep = read_csv(out / "report.csv")
        assert list(rep)[0] == "t" and len(rep["t"]) == 11
        assert (out / "plot_report.py").exists()
        assert not (out / "f.tgf").exists()

    def test_stochastic_run_and_roles(self, tmp_path, capsys):
        cfg = write_config(tmp_path, noise={"sigma": 0.3, "theta": 0.1, "c_hat": 0.5, "master_seed": 5},
                           initial={"kind": "random", "amplitude": 0.5},
                           synthetic_control={"amplitude": 0.5})
        assert cli.main(["simulate", "--config", cfg]) == 0
        assert "raised" in capsys.readouterr().out
        out = tmp_path / "out"
        u, z, v = (read_trajectory(out / n) for n in ("u.tgf", "z.tgf", "v.tgf"))
        assert np.array_equal(v.data, u.data + z.data)
        assert [t.role.name for t in (u, z, v)] == ["state_u", "noise_z", "state_v"]
        assert read_trajectory(out / "f.tgf").role.name == "control_f"

    def test_direct_solver_outputs(self, tmp_path):
        cfg = write_config(tmp_path, initial={"kind": "random", "amplitude": 0.5})
        assert cli.main(["simulate", "--config", cfg]) == 0
        assert cli.main(["simulate", "--config", cfg, "--direct", "--figures"]) == 0
        out = tmp_path / "out"
        a, b = read_trajectory(out / "v.tgf"), read_trajectory(out / "v_direct.tgf")
        rel = np.abs(a.data - b.data).max() / np.abs(a.data).max()
        assert 0 < rel < 0.05
        assert (out / "report_direct.png").exists()

    def test_initial_from_file(self, tmp_path):
        cfg = write_config(tmp_path, initial={"kind": "random", "amplitude": 0.5})
        cli.main(["simulate", "--config", cfg])
        first = read_trajectory(tmp_path / "out" / "v.tgf")
        cfg2 = write_config(tmp_path, "d.json", initial={"kind": "file", "file": "out/v.tgf"},
                            paths={"output_dir": "out2"})
        assert cli.main(["simulate", "--config", cfg2]) == 0
        assert np.array_equal(read_trajectory(tmp_path / "out2" / "v.tgf").data[0], first.data[0])

    def test_reproducible(self, tmp_path):
        outs = []
        for d in ("a", "b"):
            cfg = write_config(tmp_path, f"{d}.json", noise={"sigma": 0.3, "master_seed": 9},
                               initial={"kind": "random"}, paths={"output_dir": d})
            assert cli.main(["simulate", "--config", cfg]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / d).iterdir())})
        assert outs[0] == outs[1]


class TestOptimize:
    def test_writes_history(self, tmp_path):
        cfg = write_config(tmp_path, initial={"kind": "random", "amplitude": 0.5},
                           optimizer={"max_iters": 3})
        assert cli.main(["optimize", "--config", cfg]) == 0
        hist = read_csv(tmp_path / "out" / "history.csv")
        assert list(hist) == ["iter", "J", "stderr", "grad_norm", "residual", "step", "wall_time"]
        assert np.all(np.diff(hist["J"]) <= 0)
        assert not hist["wall_time"].any()
        assert read_trajectory(tmp_path / "out" / "control_final.tgf").role.name == "control_f"

    def test_timing_flag(self, tmp_path):
        cfg = write_config(tmp_path, initial={"kind": "random"}, optimizer={"max_iters": 1})
        assert cli.main(["optimize", "--config", cfg, "--timing"]) == 0
        assert read_csv(tmp_path / "out" / "history.csv")["wall_time"][-1] > 0


class TestExitCodes:
    def test_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, grid={"N": 7})
        assert cli.main(["simulate", "--config", cfg]) == cli.EXIT_CONFIG
        assert "grid" in capsys.readouterr().err

    def test_mismatched_target_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        cli.main(["simulate", "--config", cfg])
        cfg2 = write_config(tmp_path, "d.json", time={"steps": 20}, paths={"target_file": "out/v.tgf"})
        assert cli.main(["optimize", "--config", cfg2]) == cli.EXIT_CONFIG
        assert "paths.target_file" in capsys.readouterr().err

    def test_nonfinite(self, tmp_path):
        cfg = write_config(tmp_path, time={"T": 1.0, "steps": 4},
                           initial={"kind": "random", "amplitude": 1000.0})
        assert cli.main(["simulate", "--config", cfg]) == cli.EXIT_NONFINITE

    def test_step_collapse(self, tmp_path, monkeypatch):
        def collapse(*a, **k):
            raise StepCollapse("forced")

        monkeypatch.setattr(cli, "optimize", collapse)
        assert cli.main(["optimize", "--config", write_config(tmp_path)]) == cli.EXIT_COLLAPSE

    def test_failed_check(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(cli.checks, "identity_suite",
                            lambda g, p: [CheckResult("forced", 1.0, 0.5, False, "upper")])
        assert cli.main(["check", "identity", "--config", write_config(tmp_path)]) == cli.EXIT_FAIL
        assert capsys.readouterr().out.split()[:2] == ["FAIL", "forced:"]


def test_check_identity_passes(tmp_path, capsys):
    assert cli.main(["check", "identity", "--config", write_config(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert all(l.startswith("PASS") for l in lines[:-1])
