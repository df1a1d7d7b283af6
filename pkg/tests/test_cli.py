"""End-to-end CLI behavior: outputs, determinism, exit codes."""

import csv
import os
import subprocess
import sys

import pytest

from mixflow.cli import main

UNIFORM = """
grid.nx = 24
model.n_species = 2
init.kind = uniform
init.rho = 1.0, 1.0
time.t_end = 0.01
time.dt = 0.002
"""

BUMP = """
grid.nx = 32
model.n_species = 2
init.kind = blocks
init.interfaces = 0.5
init.block_values = 2.0, 2.0
init.w_base = 1.5
init.w_amp = 0.5
init.w_center_x = 0.35
init.w_width = 0.1
time.t_end = 0.02
time.dt = 0.002
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestRunCommand:
    def test_uniform_run_constant_diagnostics(self, tmp_path):
        cfg = write(tmp_path, "u.cfg", UNIFORM)
        out = str(tmp_path / "out")
        assert main(["run", cfg, "--out", out]) == 0
        rows = read_csv(os.path.join(out, "diagnostics.csv"))
        assert len(rows) == 5
        m1 = {float(r["mass_1"]) for r in rows}
        assert len(m1) == 1
        assert all(abs(float(r["dissipation"])) <= 1e-14 for r in rows)

    def test_snapshot_schema(self, tmp_path):
        cfg = write(tmp_path, "b.cfg", BUMP)
        out = str(tmp_path / "out")
        assert main(["run", cfg, "--out", out]) == 0
        rows = read_csv(os.path.join(out, "fields_000000.csv"))
        assert list(rows[0].keys()) == ["index", "x", "w", "p", "rho_1", "rho_2", "u_1", "u_2"]
        assert len(rows) == 32
        # reconstruction identity holds in the file
        for r in rows[:5]:
            assert float(r["rho_1"]) == pytest.approx(float(r["w"]) * float(r["u_1"]), rel=1e-12)

    def test_zero_duration_single_snapshot(self, tmp_path):
        cfg = write(tmp_path, "z.cfg", UNIFORM.replace("time.t_end = 0.01", "time.t_end = 0.0"))
        out = str(tmp_path / "out")
        assert main(["run", cfg, "--out", out]) == 0
        files = sorted(os.listdir(out))
        assert files == ["diagnostics.csv", "fields_000000.csv"]
        assert len(read_csv(os.path.join(out, "diagnostics.csv"))) == 0

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write(tmp_path, "b.cfg", BUMP)
        out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
        assert main(["run", cfg, "--out", out1]) == 0
        assert main(["run", cfg, "--out", out2]) == 0
        a = open(os.path.join(out1, "diagnostics.csv"), "rb").read()
        b = open(os.path.join(out2, "diagnostics.csv"), "rb").read()
        assert a == b

    def test_env_var_overrides_out_flag(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, "u.cfg", UNIFORM)
        out = str(tmp_path / "envout")
        monkeypatch.setenv("MIXFLOW_OUT", out)
        assert main(["run", cfg, "--out", str(tmp_path / "flagout")]) == 0
        assert os.path.exists(os.path.join(out, "diagnostics.csv"))
        assert not os.path.exists(tmp_path / "flagout")

    def test_vtk_output(self, tmp_path):
        cfg = write(tmp_path, "b.cfg", BUMP)
        out = str(tmp_path / "out")
        assert main(["run", cfg, "--out", out, "--vtk"]) == 0
        vtk = os.path.join(out, "fields_000000.vtk")
        assert os.path.exists(vtk)
        head = open(vtk).read().splitlines()
        assert head[0].startswith("# vtk DataFile")
        assert "DATASET STRUCTURED_POINTS" in head
        assert any(line.startswith("CELL_DATA 32") for line in head)

    def test_output_schedule(self, tmp_path):
        cfg = write(tmp_path, "b.cfg", BUMP + "time.output_every = 5\n")
        out = str(tmp_path / "out")
        assert main(["run", cfg, "--out", out]) == 0
        snaps = sorted(f for f in os.listdir(out) if f.startswith("fields_"))
        assert snaps == ["fields_000000.csv", "fields_000005.csv", "fields_000010.csv"]

    def test_config_error_exit_2(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.cfg", UNIFORM + "model.alpha = 0.3\n")
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error: ")
        assert "alpha" in err

    def test_solver_failure_exit_3(self, tmp_path, capsys):
        hard = BUMP.replace("time.dt = 0.002", "time.dt = 0.02") + (
            "solver.max_iters = 1\nmodel.alpha = 2.0\ntime.dt_min = 0.019\n"
        )
        cfg = write(tmp_path, "hard.cfg", hard)
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 3
        assert "dt fell below" in capsys.readouterr().err


class TestVerifyCommand:
    def test_demo_config_passes(self, tmp_path, capsys):
        cfg = write(tmp_path, "b.cfg", BUMP)
        assert main(["verify", cfg]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out
        for name in ("homogeneity", "euler_identity", "gibbs_duhem",
                     "maximum_principle", "mass_conservation", "lambda_u_unity",
                     "free_energy_decay", "divergence_adjointness"):
            assert name in out

    def test_constraint_off_drift_fails_without_flag(self, tmp_path, capsys):
        text = """
grid.nx = 24
model.n_species = 2
model.lambda = number_density
model.h = power_mean
model.alpha_h = 3.0
init.kind = gaussians
init.base = 0.6, 0.6
init.amp = 0.4, 0.0
init.center_x = 0.35, 0.5
init.width = 0.08, 0.1
init.w_base = 1.5
init.w_amp = 0.5
init.w_center_x = 0.35
init.w_width = 0.1
time.t_end = 0.04
time.dt = 0.004
solver.constraint_mode = off
"""
        cfg = write(tmp_path, "drift.cfg", text)
        code = main(["verify", cfg])
        out = capsys.readouterr().out
        assert "lambda_u_unity" in out
        assert code == 4
        assert main(["verify", cfg, "--allow-drift"]) == 0

    def test_reaction_quasi_positivity_failure_named(self, tmp_path, capsys):
        text = UNIFORM + """
reaction.kind = convert
reaction.rate = -0.5
reaction.from = 1
reaction.to = 2
"""
        cfg = write(tmp_path, "react.cfg", text)
        assert main(["verify", cfg]) == 2
        assert "quasi-positive" in capsys.readouterr().err


class TestConvergeCommand:
    def test_translation_study_table(self, tmp_path, capsys):
        text = """
grid.nx = 32
model.n_species = 2
time.t_end = 0.34722222222222
time.dt = 0.03472222222222
study.kind = translation
study.velocity = 0.3
"""
        cfg = write(tmp_path, "tr.cfg", text)
        assert main(["converge", cfg, "--levels", "32,64"]) == 0
        out = capsys.readouterr().out
        assert "study: translation" in out
        assert "order" in out

    def test_oracle_compare_study(self, tmp_path, capsys):
        text = """
grid.nx = 16
model.n_species = 2
init.kind = gaussians
init.base = 1.0, 1.2
init.amp = 0.6, 0.0
init.center_x = 0.45, 0.5
init.width = 0.12, 0.1
time.t_end = 0.002
time.dt = 0.0005
study.kind = oracle_compare
"""
        cfg = write(tmp_path, "oc.cfg", text)
        assert main(["converge", cfg, "--levels", "16,32"]) == 0
        out = capsys.readouterr().out
        assert "study: oracle_compare" in out
        lines = [ln for ln in out.splitlines() if ln.strip() and ln.split()[0].isdigit()]
        errs = [float(ln.split()[1]) for ln in lines]
        assert errs[0] > errs[1]

    def test_bad_levels_exit_2(self, tmp_path):
        cfg = write(tmp_path, "u.cfg", UNIFORM)
        assert main(["converge", cfg, "--levels", "64"]) == 2

    def test_missing_study_exit_2(self, tmp_path):
        cfg = write(tmp_path, "u.cfg", UNIFORM)
        assert main(["converge", cfg, "--levels", "16,32"]) == 2


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        cfg = write(tmp_path, "u.cfg", UNIFORM)
        res = subprocess.run(
            [sys.executable, "-m", "mixflow.cli", "run", str(cfg), "--out", str(tmp_path / "o")],
            capture_output=True, text=True,
        )
        assert res.returncode == 0, res.stderr
