import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipfd import driver
from slipfd.driver import (
    ConfigError,
    SimConfig,
    Simulation,
    fit_jeffery,
    jeffery_config,
    jeffery_period,
    load_config,
    run_scenario,
    scenario_config,
    sedimentation_config,
)

COARSE = dict(h1=1.0 / 8.0, dt=1.0e-2, ls=0.05)


class TestConfig:
    def test_jeffery_preset_values(self):
        cfg = jeffery_config()
        assert cfg.extents == (0.0, 0.0, 2.0, 2.0)
        assert cfg.X0 == (1.0, 1.0)
        assert (cfg.a, cfg.b) == (0.25, 0.125)
        assert cfg.shear_rate == 2.0
        assert cfg.rho_f == cfg.rho_s == 1.0
        assert cfg.mu == 1.0
        assert cfg.stokes_mode

    def test_sedimentation_preset_values(self):
        cfg = sedimentation_config()
        assert cfg.extents == (0.0, 0.0, 0.5, 10.0)
        assert cfg.X0 == (0.25, 9.7)
        assert (cfg.a, cfg.b) == (0.0625, 0.03125)
        assert cfg.mu == 0.1
        assert (cfg.rho_f, cfg.rho_s) == (1.0, 1.01)
        assert cfg.gravity == (0.0, -9.8)
        assert not cfg.stokes_mode

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            scenario_config("mixing-layer")

    @pytest.mark.parametrize("bad", [
        dict(dt=0.0), dict(ls=-0.1), dict(b=0.3), dict(h1=-1.0),
        dict(wall_kind="plug"), dict(method="multigrid"), dict(X0=(5.0, 1.0)),
    ])
    def test_validation_rejects(self, bad):
        cfg = jeffery_config(**bad)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_h2_capped_below_semi_minor(self):
        cfg = jeffery_config(h1=1.0 / 4.0)
        assert cfg.resolved_h2() == pytest.approx(cfg.b / 2.0)
        cfg2 = jeffery_config(h1=1.0 / 32.0)
        assert cfg2.resolved_h2() == pytest.approx(1.0 / 32.0)


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text(
            "[case]\n"
            "scenario = jeffery\n"
            "ls = 0.025\n"
            "dt = 0.004\n"
            "h1 = 0.125\n"
            "t_final = 0.02\n"
            "stokes_mode = true\n"
            "gravity = 0.0 -1.0\n"
            "extents = 0 0 2 2\n"
        )
        cfg = load_config(str(path))
        assert cfg.ls == pytest.approx(0.025)
        assert cfg.dt == pytest.approx(0.004)
        assert cfg.gravity == (0.0, -1.0)
        assert cfg.scenario == "jeffery"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[case]\nswirl = 3\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/run.ini")

    def test_bad_pair(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[case]\ngravity = 1 2 3\n")
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestFitJeffery:
    def test_exact_recovery(self):
        theta = np.linspace(0.0, -2.0, 200)
        gamma, p = 2.0, 0.6
        omega = 0.5 * gamma * (-1.0 + p * np.cos(2.0 * theta))
        g, pf = fit_jeffery(theta, omega)
        assert g == pytest.approx(gamma, abs=1e-12)
        assert pf == pytest.approx(p, abs=1e-12)

    @given(gamma=st.floats(0.5, 4.0), p=st.floats(0.0, 0.9),
           seed=st.integers(0, 100))
    @settings(max_examples=40, deadline=None)
    def test_noise_robustness(self, gamma, p, seed):
        theta = np.linspace(0.2, -2.4, 400)
        omega = 0.5 * gamma * (-1.0 + p * np.cos(2.0 * theta))
        rng = np.random.default_rng(seed)
        omega = omega + rng.uniform(-1e-3, 1e-3, size=omega.size)
        g, pf = fit_jeffery(theta, omega)
        assert abs(g - gamma) < 1e-2
        assert abs(pf - p) < 1e-2

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            fit_jeffery(np.linspace(0, 1, 5), np.zeros(5))

    def test_degenerate_theta_range(self):
        theta = np.full(20, 0.3)
        with pytest.raises(ValueError):
            fit_jeffery(theta, -np.ones(20))

    def test_period_formula(self):
        assert jeffery_period(2.0, 0.0) == pytest.approx(2.0 * np.pi)
        assert jeffery_period(2.0, 0.6) == pytest.approx(
            4.0 * np.pi / (2.0 * 0.8))
        with pytest.raises(ValueError):
            jeffery_period(-1.0, 0.5)
        with pytest.raises(ValueError):
            jeffery_period(2.0, 1.0)


class TestSimulationBasics:
    def test_wall_field_antisymmetric(self):
        sim = Simulation(jeffery_config(**COARSE, t_final=0.01))
        pts = np.array([[0.5, 1.5], [0.5, 0.5]])
        w = sim.wall_field(pts).reshape(-1, 2)
        assert w[0, 0] == pytest.approx(-w[1, 0])
        assert np.allclose(w[:, 1], 0.0)
        # wall speed W = shear_rate * (height/2) at the moving walls
        top = np.array([[1.0, 2.0]])
        assert sim.wall_field(top)[0] == pytest.approx(2.0)

    def test_initial_velocity_rigid_inside(self):
        cfg = jeffery_config(**COARSE, omega0=0.5)
        sim = Simulation(cfg)
        u = sim.initial_velocity().reshape(-1, 2)
        pts = sim.osys.fine.vertices
        d = pts - np.array([1.0, 1.0])
        inside = (d[:, 0] / cfg.a) ** 2 + (d[:, 1] / cfg.b) ** 2 <= 1.0
        assert np.allclose(u[inside, 0], -0.5 * d[inside, 1], atol=1e-13)
        assert np.allclose(u[inside, 1], 0.5 * d[inside, 0], atol=1e-13)

    def test_wall_ramp_factor(self):
        sim = Simulation(jeffery_config(**COARSE, wall_ramp_steps=4))
        facs = []
        for k in range(6):
            sim.step_index = k
            facs.append(sim._wall_factor())
        assert facs == [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]
        # ramped starts begin from rest
        assert np.abs(sim.initial_velocity()).max() == 0.0

    def test_n_steps_rounding(self):
        sim = Simulation(jeffery_config(**COARSE, t_final=0.1))
        assert sim.n_steps == 10


class TestRunScenario:
    def test_zero_horizon_initial_state_only(self, tmp_path):
        cfg = jeffery_config(**COARSE, t_final=0.0)
        result = run_scenario(cfg, str(tmp_path / "r"))
        assert result.status == "completed"
        assert len(result.records) == 1
        assert (tmp_path / "r" / "series.csv").exists()
        assert (tmp_path / "r" / "summary.txt").exists()

    def test_single_step_symmetry(self):
        """One Jeffery step: the centered particle stays translationally at
        rest to well below one percent of the wall speed."""
        cfg = jeffery_config(**COARSE, t_final=0.01)
        result = run_scenario(cfg)
        assert result.status == "completed"
        rec = result.records[-1]
        W = cfg.shear_rate * 1.0
        assert np.hypot(*rec.U) <= 1e-2 * W

    def test_determinism(self, tmp_path):
        cfg = jeffery_config(**COARSE, t_final=0.03)
        a = run_scenario(cfg, str(tmp_path / "a"))
        b = run_scenario(cfg, str(tmp_path / "b"))
        ra = (tmp_path / "a" / "series.csv").read_bytes()
        rb = (tmp_path / "b" / "series.csv").read_bytes()
        assert ra == rb
        assert a.status == b.status == "completed"

    def test_records_monotone_time_and_finite(self):
        cfg = jeffery_config(**COARSE, t_final=0.03)
        result = run_scenario(cfg)
        ts = [r.t for r in result.records]
        assert all(b > a for a, b in zip(ts, ts[1:]))
        for r in result.records[1:]:
            assert np.isfinite(r.row()).all()

    def test_vtk_snapshots(self, tmp_path):
        cfg = jeffery_config(**COARSE, t_final=0.02, output_every=1)
        run_scenario(cfg, str(tmp_path / "r"))
        assert (tmp_path / "r" / "fields_0000.vtk").exists()
        assert (tmp_path / "r" / "fields_0002.vtk").exists()

    def test_failure_recorded_in_status(self, tmp_path):
        # particle starting against the wall trips the clearance check
        cfg = jeffery_config(**COARSE, t_final=0.01, X0=(0.3, 1.0))
        result = run_scenario(cfg, str(tmp_path / "r"))
        assert result.status.startswith("failed at step 1")
        text = (tmp_path / "r" / "summary.txt").read_text()
        assert "failed at step 1" in text


class TestStokesModeSwitch:
    def test_advection_only_outside_stokes_mode(self):
        """With advection on, the transported field differs from the
        implicit-step field; in Stokes mode they are identical."""
        cfg_s = jeffery_config(**COARSE, t_final=0.01, stokes_mode=True)
        sim_s = Simulation(cfg_s)
        sim_s.step()
        u_stokes = sim_s.u.copy()
        cfg_a = jeffery_config(**COARSE, t_final=0.01, stokes_mode=False)
        sim_a = Simulation(cfg_a)
        sim_a.step()
        assert np.allclose(sim_s.last_cg.u1, u_stokes)
        assert not np.allclose(sim_a.u, sim_a.last_cg.u1)


class TestBuiltinCheck:
    def test_all_pass(self):
        results = driver.builtin_check()
        names = [r.name for r in results]
        assert len(names) == len(set(names))
        for r in results:
            assert r.passed, f"{r.name}: {r.detail}"
