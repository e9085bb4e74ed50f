"""Configuration parsing, problem-family consistency, CSV/VTK export,
and the command line front end (exit codes, file outputs, determinism)."""

import math

import numpy as np
import pytest

from westervelt_hdg.cli import main
from westervelt_hdg.config import (
    ConfigError,
    RunConfig,
    default_config,
    load_config,
    parse_config,
    serialize_config,
)
from westervelt_hdg.experiments import (
    ConvergenceReport,
    DeltaLevel,
    DeltaReport,
    LevelResult,
    export_field,
    import_field_csv,
    time_step,
)
from westervelt_hdg.analysis import DiscreteScalarField
from westervelt_hdg.mesh import generate_structured_mesh
from westervelt_hdg.problems import (
    delta_study_problem,
    manufactured_problem,
    wavefront_problem,
)

import oracles


class TestConfig:
    def test_defaults_per_kind(self):
        h = default_config("h_convergence")
        assert h.kind == "h_convergence"
        assert h.levels == (4, 8, 16, 32)
        assert h.c == 100.0 and h.dt is None
        d = default_config("delta_convergence")
        assert d.c == 1.0 and d.k == 0.3 and d.levels == (16,)
        assert d.tau == 4.0 and d.tau_mode == "uniform"
        w = default_config("wavefront")
        assert w.degree == 5 and w.dt == 1.0e-6
        assert w.gamma == 0.85 and w.beta == 0.45
        with pytest.raises(ConfigError, match="unknown problem kind"):
            default_config("spectral")

    @pytest.mark.parametrize("kind", ["h_convergence", "delta_convergence",
                                      "wavefront"])
    def test_serialize_parse_round_trip(self, kind):
        cfg = default_config(kind)
        assert parse_config(serialize_config(cfg)) == cfg

    def test_round_trip_preserves_overrides(self):
        cfg = RunConfig(kind="wavefront", c=1500.0, k=-10.0, delta=6.0e-9,
                        final_time=2.0e-4, degree=3, levels=(16,),
                        gamma=0.85, beta=0.45, dt=1.0e-6,
                        snapshot_times=(5.0e-5, 2.0e-4),
                        output_dir="results/front", profile_samples=129)
        assert parse_config(serialize_config(cfg)) == cfg

    def test_overlay_on_base(self):
        base = default_config("wavefront")
        cfg = parse_config("[newmark]\ndt = 5e-7\n", base=base)
        assert cfg.dt == 5.0e-7
        assert cfg.kind == "wavefront" and cfg.c == base.c

    def test_unknown_section_and_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config section"):
            parse_config("[spectral]\nmodes = 3\n")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("[problem]\nmach = 2\n")

    def test_number_parse_errors_name_the_location(self):
        with pytest.raises(ConfigError, match=r"\[problem\] c"):
            parse_config("[problem]\nc = fast\n")
        with pytest.raises(ConfigError, match=r"\[discretization\] degree"):
            parse_config("[discretization]\ndegree = 1.5\n")
        with pytest.raises(ConfigError, match="levels must be integers"):
            parse_config("[discretization]\nlevels = 4,eight\n")
        with pytest.raises(ConfigError, match="snapshot_times"):
            parse_config("[output]\nsnapshot_times = 0.1,later\n")

    def test_levels_accept_commas_and_spaces(self):
        a = parse_config("[discretization]\nlevels = 4,8,16\n")
        b = parse_config("[discretization]\nlevels = 4 8 16\n")
        assert a.levels == b.levels == (4, 8, 16)

    def test_kind_conflict_with_base(self):
        base = default_config("h_convergence")
        with pytest.raises(ConfigError, match="conflicts"):
            parse_config("[problem]\nkind = wavefront\n", base=base)

    def test_dt_none_round_trip(self):
        cfg = default_config("h_convergence")
        assert cfg.dt is None
        assert parse_config(serialize_config(cfg)).dt is None

    @pytest.mark.parametrize("field,value,match", [
        ("kind", "unknown", "unknown problem kind"),
        ("c", -1.0, "c must be positive"),
        ("delta", -1.0e-9, "delta must be"),
        ("final_time", 0.0, "final_time"),
        ("degree", -1, "degree"),
        ("levels", (), "levels"),
        ("levels", (0,), "levels"),
        ("tau", 0.0, "tau must be positive"),
        ("tau_mode", "everywhere", "tau_mode"),
        ("gamma", 1.5, "gamma"),
        ("beta", 0.6, "beta"),
        ("tol", 0.0, "tol"),
        ("max_iterations", 0, "max_iterations"),
        ("coarse_steps", 0, "coarse_steps"),
        ("dt", -0.1, "dt must be positive"),
        ("snapshot_times", (-1.0,), "snapshot_times"),
        ("profile_samples", 1, "profile_samples"),
    ])
    def test_validate_rejects_bad_fields(self, field, value, match):
        import dataclasses
        cfg = dataclasses.replace(default_config("h_convergence"),
                                  **{field: value})
        with pytest.raises(ConfigError, match=match):
            cfg.validate()

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.ini")

    def test_load_config_reads_file(self, tmp_path):
        path = tmp_path / "cfg.ini"
        path.write_text("[problem]\nk = 0.25\n", encoding="utf-8")
        assert load_config(path).k == 0.25


def fd_t(f, x, y, t, h=1.0e-5):
    return (f(x, y, t + h) - f(x, y, t - h)) / (2.0 * h)


def fd_tt(f, x, y, t, h=1.0e-5):
    return (f(x, y, t + h) - 2.0 * f(x, y, t) + f(x, y, t - h)) / (h * h)


def fd_lap(f, x, y, t, h=1.0e-4):
    return (f(x + h, y, t) + f(x - h, y, t) + f(x, y + h, t)
            + f(x, y - h, t) - 4.0 * f(x, y, t)) / (h * h)


class TestProblemFamilies:
    def test_manufactured_forcing_solves_the_equation(self):
        # forcing must equal (1 + 2k dpsi) ddpsi - c^2 lap(psi)
        # - delta lap(dpsi) with all derivatives taken by finite differences
        prob = manufactured_problem(c=100.0, k=0.5, delta=6.0e-9)
        rng = np.random.default_rng(2)
        pts = rng.uniform(0.1, 0.9, size=(20, 2))
        times = rng.uniform(0.05, 0.95, size=20)
        worst = 0.0
        scale = 0.0
        for (x, y), t in zip(pts, times):
            psi = prob.exact_psi
            dpsi = fd_t(psi, x, y, t)
            ddpsi = fd_tt(psi, x, y, t)
            lap = fd_lap(psi, x, y, t)
            lap_dpsi = (fd_lap(psi, x, y, t + 1.0e-5)
                        - fd_lap(psi, x, y, t - 1.0e-5)) / 2.0e-5
            want = ((1.0 + 2.0 * prob.k * dpsi) * ddpsi
                    - prob.c ** 2 * lap - prob.delta * lap_dpsi)
            got = prob.forcing(x, y, t)
            worst = max(worst, abs(got - want))
            scale = max(scale, abs(got))
        assert worst <= 1.0e-6 * scale

    def test_manufactured_exact_fields_are_consistent(self):
        prob = manufactured_problem()
        rng = np.random.default_rng(3)
        for x, y, t in rng.uniform(0.1, 0.9, size=(10, 3)):
            dpsi_fd = fd_t(prob.exact_psi, x, y, t)
            assert abs(prob.exact_dpsi(x, y, t) - dpsi_fd) <= 1e-6 * max(
                1.0, abs(dpsi_fd))
            h = 1.0e-6
            gx = (prob.exact_psi(x + h, y, t)
                  - prob.exact_psi(x - h, y, t)) / (2.0 * h)
            gy = (prob.exact_psi(x, y + h, t)
                  - prob.exact_psi(x, y - h, t)) / (2.0 * h)
            vx, vy = prob.exact_v(x, y, t)
            assert abs(vx - gx) <= 1e-6 * max(1.0, abs(gx))
            assert abs(vy - gy) <= 1e-6 * max(1.0, abs(gy))

    def test_manufactured_initial_data_consistency(self):
        prob = manufactured_problem()
        rng = np.random.default_rng(4)
        assert prob.psi0 is None  # the standing wave starts from rest
        for x, y in rng.uniform(0.1, 0.9, size=(8, 2)):
            assert abs(prob.psi1(x, y) - prob.exact_dpsi(x, y, 0.0)) <= 1e-14

            def f(xx, yy, tt):
                return prob.psi1(xx, yy)

            lap_fd = fd_lap(f, x, y, 0.0)
            assert abs(prob.lap_psi1(x, y) - lap_fd) <= 1e-5 * max(
                1.0, abs(lap_fd))

    def test_delta_study_laplacians(self):
        prob = delta_study_problem(1.0e-4)
        rng = np.random.default_rng(5)
        for x, y in rng.uniform(0.1, 0.9, size=(8, 2)):
            for f, lap in ((prob.psi0, prob.lap_psi0),
                           (prob.psi1, prob.lap_psi1)):
                def g(xx, yy, tt):
                    return f(xx, yy)

                lap_fd = fd_lap(g, x, y, 0.0)
                assert abs(lap(x, y) - lap_fd) <= 1e-5 * max(1.0, abs(lap_fd))

    def test_wavefront_forcing_shape(self):
        strength, decay, width = 400.0, 5.0e4, 3.0e-2
        prob = wavefront_problem(strength=strength, decay=decay, width=width)
        peak = strength / math.sqrt(width)
        assert abs(prob.forcing(0.5, 0.5, 0.0) - peak) <= 1e-10 * peak
        # radial Gaussian: one width off-center scales by exp(-1/2)
        got = prob.forcing(0.5 + width, 0.5, 0.0)
        assert abs(got - peak * math.exp(-0.5)) <= 1e-10 * peak
        # exponential time decay with the configured rate
        got_t = prob.forcing(0.5, 0.5, 1.0 / decay)
        assert abs(got_t - peak * math.exp(-1.0)) <= 1e-10 * peak
        # vectorized evaluation over arrays
        x = np.array([0.5, 0.6])
        vals = prob.forcing(x, np.array([0.5, 0.5]), 0.0)
        assert vals.shape == (2,)
        assert abs(vals[0] - peak) <= 1e-10 * peak
        assert prob.psi0 is None and prob.psi1 is None


class TestStudyHelpers:
    def test_time_step_rule(self):
        cfg = default_config("h_convergence")  # coarse_steps=200, T=1
        h0 = math.sqrt(2.0) / 4.0
        assert time_step(cfg, h0, h0) == 1.0 / 200
        # halving h at p=1 multiplies the step count by 2^(3/2)
        n = math.ceil(200 * 2.0 ** 1.5 - 1.0e-9)
        assert time_step(cfg, h0 / 2.0, h0) == 1.0 / n
        import dataclasses
        cfg2 = dataclasses.replace(cfg, dt=1.0e-3)
        assert time_step(cfg2, h0 / 2.0, h0) == 1.0e-3

    def test_convergence_report_csv(self):
        rep = ConvergenceReport(degree=1)
        rep.levels.append(LevelResult(n=4, h=0.5, dt=0.1, err_psi=1.0,
                                      err_v=2.0, err_star=4.0,
                                      mean_iterations=3.0))
        rep.levels.append(LevelResult(n=8, h=0.25, dt=0.05, err_psi=0.25,
                                      err_v=0.5, err_star=0.5,
                                      mean_iterations=3.0))
        rep.failures.append("n=16: corrector stalled")
        text = rep.to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == ("h,dt,err_psi,rate_psi,err_v,rate_v,"
                            "err_psistar,rate_psistar")
        first = lines[1].split(",")
        assert first[3] == "" and first[5] == "" and first[7] == ""
        second = lines[2].split(",")
        assert float(second[3]) == pytest.approx(2.0)
        assert float(second[5]) == pytest.approx(2.0)
        assert float(second[7]) == pytest.approx(3.0)
        assert lines[3] == "# n=16: corrector stalled"

    def test_delta_report_slope_fit(self):
        rep = DeltaReport(degree=1)
        for d in (1.0e-2, 1.0e-4, 1.0e-6, 1.0e-8):
            rep.levels.append(DeltaLevel(delta=d, err_psi=3.0 * d,
                                         err_v=0.5 * d))
        # a level outside the fit window must not affect the slopes
        rep.levels.append(DeltaLevel(delta=1.0e-10, err_psi=1.0,
                                     err_v=1.0))
        assert rep.slope_psi == pytest.approx(1.0, abs=1e-12)
        assert rep.slope_v == pytest.approx(1.0, abs=1e-12)
        text = rep.to_csv()
        assert text.startswith("delta,err_psi,rate_psi,err_v,rate_v\n")
        tail = [ln for ln in text.splitlines() if ln.startswith("# slope")]
        assert len(tail) == 2
        for line in tail:
            assert float(line.split(",")[1]) == pytest.approx(1.0)

    def test_delta_report_too_few_points_is_nan(self):
        rep = DeltaReport(degree=0)
        rep.levels.append(DeltaLevel(delta=1.0e-4, err_psi=1.0, err_v=1.0))
        assert math.isnan(rep.slope_psi)


class TestFieldExport:
    def make_field(self):
        msh = generate_structured_mesh(2)
        coeffs = oracles.l2_project_scalar(msh, 1,
                                           lambda x, y: x * x + 0.5 * y)
        return DiscreteScalarField(msh, 1, coeffs), msh

    def test_csv_round_trip_is_exact(self, tmp_path):
        fld, msh = self.make_field()
        path = tmp_path / "field.csv"
        export_field(fld, path, fmt="csv")
        pts, vals = import_field_csv(path)
        assert pts.shape[0] == vals.shape[0] > 0
        want = fld.eval_at(pts)
        assert np.array_equal(vals, want) or np.max(
            np.abs(vals - want)) <= 1e-15

    def test_vtk_structure(self, tmp_path):
        fld, msh = self.make_field()
        path = tmp_path / "field.vtk"
        export_field(fld, path, fmt="vtk")
        text = path.read_text(encoding="utf-8")
        assert text.startswith("# vtk DataFile Version 2.0\n")
        assert f"POINTS {msh.n_vertices} double" in text
        assert f"CELLS {msh.n_triangles} {4 * msh.n_triangles}" in text
        assert f"POINT_DATA {msh.n_vertices}" in text
        assert text.count("\n5\n") >= 1  # triangle cell type markers

    def test_unknown_format_rejected(self, tmp_path):
        fld, msh = self.make_field()
        with pytest.raises(ValueError, match="unknown export format"):
            export_field(fld, tmp_path / "field.xyz", fmt="xyz")

    def test_import_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "foreign.csv"
        path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
        with pytest.raises(ValueError, match="header"):
            import_field_csv(path)


TINY_H = """
[problem]
c = 1.0
k = 0.3
delta = 1e-3
final_time = 0.04

[discretization]
degree = 0
levels = 2

[newmark]
coarse_steps = 4
"""

TINY_DELTA = """
[problem]
kind = delta_convergence
k = 0.05
final_time = 0.02

[discretization]
degree = 0
levels = 2

[newmark]
coarse_steps = 2
"""

TINY_WAVEFRONT = """
[problem]
kind = wavefront
final_time = 4e-6

[discretization]
degree = 1
levels = 4

[newmark]
dt = 2e-6

[output]
snapshot_times = 4e-6
profile_samples = 16
"""


class TestCli:
    def write(self, tmp_path, name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_h_convergence_writes_expected_files(self, tmp_path, capsys):
        cfg = self.write(tmp_path, "tiny.ini", TINY_H)
        out = tmp_path / "out"
        code = main(["h-convergence", "--config", str(cfg),
                     "--out", str(out)])
        assert code == 0
        csv = out / "h_convergence_p0.csv"
        assert csv.exists() and (out / "config.ini").exists()
        header = csv.read_text(encoding="utf-8").splitlines()[0]
        assert header == ("h,dt,err_psi,rate_psi,err_v,rate_v,"
                          "err_psistar,rate_psistar")
        assert f"wrote {csv}" in capsys.readouterr().out

    def test_outputs_are_deterministic(self, tmp_path):
        cfg = self.write(tmp_path, "tiny.ini", TINY_H)
        outs = []
        for name in ("out1", "out2"):
            out = tmp_path / name
            assert main(["h-convergence", "--config", str(cfg),
                         "--out", str(out)]) == 0
            outs.append((out / "h_convergence_p0.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_delta_convergence_subcommand(self, tmp_path, capsys):
        cfg = self.write(tmp_path, "tiny.ini", TINY_DELTA)
        out = tmp_path / "out"
        assert main(["delta-convergence", "--config", str(cfg),
                     "--out", str(out)]) == 0
        text = (out / "delta_convergence_p0.csv").read_text(encoding="utf-8")
        assert text.startswith("delta,err_psi,rate_psi,err_v,rate_v\n")
        assert "# slope_psi," in text
        assert "fitted slopes" in capsys.readouterr().out

    def test_wavefront_subcommand(self, tmp_path, capsys):
        cfg = self.write(tmp_path, "tiny.ini", TINY_WAVEFRONT)
        out = tmp_path / "out"
        assert main(["wavefront", "--config", str(cfg),
                     "--out", str(out)]) == 0
        prof = out / "wavefront_profile.csv"
        assert prof.exists()
        lines = prof.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "x,dpsi_nonlinear,dpsi_linear"
        assert len(lines) == 1 + 16
        for variant in ("nonlinear", "linear"):
            assert (out / f"wavefront_{variant}_t4e-06.csv").exists()
            assert (out / f"wavefront_{variant}_t4e-06.vtk").exists()

    def test_run_subcommand_records_energy(self, tmp_path, capsys):
        cfg = self.write(tmp_path, "tiny.ini", TINY_H)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "energy.csv").read_text(
            encoding="utf-8").splitlines()
        assert lines[0] == "t,e0,e1"
        assert len(lines) == 1 + 4 + 1  # header + (steps + 1) samples
        stdout = capsys.readouterr().out
        assert "energy drift" in stdout
        assert "err_psi=" in stdout  # manufactured problem reports errors

    def test_run_accepts_other_kinds_from_config(self, tmp_path):
        cfg = self.write(tmp_path, "tiny.ini", TINY_DELTA)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "energy.csv").exists()

    def test_cli_overrides(self, tmp_path):
        cfg = self.write(tmp_path, "tiny.ini", TINY_H)
        out = tmp_path / "elsewhere"
        assert main(["h-convergence", "--config", str(cfg), "--p", "1",
                     "--levels", "2", "--out", str(out)]) == 0
        assert (out / "h_convergence_p1.csv").exists()

    def test_exit_2_on_usage_and_config_errors(self, tmp_path, capsys):
        assert main(["no-such-command"]) == 2
        capsys.readouterr()
        bad = self.write(tmp_path, "bad.ini", "[problem]\nmach = 2\n")
        assert main(["h-convergence", "--config", str(bad)]) == 2
        assert "configuration error" in capsys.readouterr().err
        missing = tmp_path / "absent.ini"
        assert main(["h-convergence", "--config", str(missing)]) == 2
        capsys.readouterr()
        wf = self.write(tmp_path, "wf.ini", "[problem]\nkind = wavefront\n")
        assert main(["h-convergence", "--config", str(wf)]) == 2
        assert "conflicts" in capsys.readouterr().err

    def test_exit_2_on_bad_levels_override(self, tmp_path, capsys):
        cfg = self.write(tmp_path, "tiny.ini", TINY_H)
        assert main(["h-convergence", "--config", str(cfg),
                     "--levels", "2,elephants"]) == 2
        capsys.readouterr()

    def test_exit_3_on_nonconvergence(self, tmp_path, capsys):
        text = TINY_H + "max_iterations = 1\ntol = 1e-16\n"
        cfg = self.write(tmp_path, "stall.ini", text)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 3
        assert "solver failure" in capsys.readouterr().err

    def test_failing_level_yields_annotated_partial_table(self, tmp_path):
        # refinement studies keep going past a stalled level and record it
        text = TINY_H + "max_iterations = 1\ntol = 1e-16\n"
        cfg = self.write(tmp_path, "stall.ini", text)
        out = tmp_path / "out"
        assert main(["h-convergence", "--config", str(cfg),
                     "--out", str(out)]) == 0
        body = (out / "h_convergence_p0.csv").read_text(encoding="utf-8")
        assert "# n=2:" in body and "did not converge" in body

    def test_exit_4_on_output_collision(self, tmp_path, capsys):
        cfg = self.write(tmp_path, "tiny.ini", TINY_H)
        blocker = tmp_path / "occupied"
        blocker.write_text("not a directory", encoding="utf-8")
        assert main(["h-convergence", "--config", str(cfg),
                     "--out", str(blocker)]) == 4
        assert "i/o error" in capsys.readouterr().err

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "westervelt-hdg" in capsys.readouterr().out
