"""Operator-splitting time loop and scenario orchestration.

Each step: (1) explicit prediction of the particle velocities from the
hydrodynamic force and torque; (2) the implicit coupled velocity step solved
by conjugate gradient on the virtual control; (3) pure advection of the new
velocity along its own characteristics (skipped in Stokes mode); (4) explicit
position update.  The loop is strictly sequential and fully deterministic.

Also houses the two reference scenarios (a sheared box with a centered
ellipse, and an ellipse sedimenting in a closed column), the angular-velocity
fit omega = (gamma/2)(-1 + p cos 2 theta), and a built-in self-check suite.
"""

from __future__ import annotations

import configparser
import csv
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem, rigid
from .lsfd import BSystem, CgResult, Control, LsfdStep, OmegaSystem, StepContext
from .mesh import (
    BoundaryTag,
    EllipseGeom,
    TriMesh,
    build_ellipse_mesh,
    build_rect_mesh,
    place_mesh,
    refine_midpoint,
    write_vtk,
)
from .transport import AdvectionProblem, advect


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    scenario: str = "jeffery"
    extents: tuple = (0.0, 0.0, 2.0, 2.0)
    h1: float = 1.0 / 32.0
    h2: float | None = None          # defaults to h1, capped below the semi-minor axis
    dt: float = 2.0e-3
    t_final: float = 4.4
    rho_f: float = 1.0
    rho_s: float = 1.0
    mu: float = 1.0
    ls: float = 0.05                  # slip length; 0 selects the no-slip limit
    gravity: tuple = (0.0, 0.0)
    wall_kind: str = "shear"          # "shear" (linear profile) or "rest"
    shear_rate: float = 2.0
    X0: tuple = (1.0, 1.0)
    theta0: float = 0.0
    U0: tuple = (0.0, 0.0)
    omega0: float = 0.0
    a: float = 0.25
    b: float = 0.125
    stokes_mode: bool = True
    tol: float = 1.0e-10              # control CG stopping ratio
    tol_lin: float = 1.0e-10
    cg_max_iter: int = 200
    cg_reg: float = 1.0e-6            # control-field penalty, in units of rho_f
    jac_refresh_angle: float = 0.1    # rebuild the response matrix past this rotation
    method: str = "direct"            # saddle-point backend
    output_every: int = 0             # VTK cadence in steps; 0 disables
    wall_ramp_steps: int = 0          # >0: start at rest, grow wall speed over this many steps
    predictor_corrector: bool = False
    stress_offset_factor: float = 0.5  # stress sample offset from gamma, in units of h1

    def resolved_h2(self) -> float:
        h2 = self.h1 if self.h2 is None else self.h2
        if h2 >= self.b:
            h2 = 0.5 * self.b
        return h2

    def validate(self) -> None:
        if self.dt <= 0 or self.t_final < 0:
            raise ConfigError("need dt > 0 and t_final >= 0")
        if self.ls < 0:
            raise ConfigError("slip length must be nonnegative")
        if not (0 < self.b <= self.a):
            raise ConfigError("need 0 < b <= a")
        if self.h1 <= 0:
            raise ConfigError("h1 must be positive")
        if self.wall_kind not in ("shear", "rest"):
            raise ConfigError(f"unknown wall_kind {self.wall_kind!r}")
        if self.method not in ("direct", "uzawa"):
            raise ConfigError(f"unknown method {self.method!r}")
        x0, y0, x1, y1 = self.extents
        if not (x0 < self.X0[0] < x1 and y0 < self.X0[1] < y1):
            raise ConfigError("initial center outside the flow domain")


def jeffery_config(**overrides) -> SimConfig:
    """Sheared square box with a centered ellipse, Stokes mode."""
    cfg = SimConfig()
    return replace(cfg, **overrides)


def sedimentation_config(**overrides) -> SimConfig:
    """Ellipse falling in a closed water column under gravity."""
    cfg = SimConfig(
        scenario="sedimentation",
        extents=(0.0, 0.0, 0.5, 10.0),
        h1=1.0 / 64.0,
        dt=1.0e-3,
        t_final=1.0,
        rho_f=1.0,
        rho_s=1.01,
        mu=0.1,
        ls=0.25,
        gravity=(0.0, -9.8),
        wall_kind="rest",
        shear_rate=0.0,
        X0=(0.25, 9.7),
        a=0.0625,
        b=0.03125,
        stokes_mode=False,
    )
    return replace(cfg, **overrides)


_SCENARIOS = {"jeffery": jeffery_config, "sedimentation": sedimentation_config}


def scenario_config(name: str, **overrides) -> SimConfig:
    try:
        maker = _SCENARIOS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}") from None
    return maker(scenario=name, **overrides)


# ---------------------------------------------------------------------------
# config files


_FLOAT_FIELDS = {
    "h1", "h2", "dt", "t_final", "rho_f", "rho_s", "mu", "ls",
    "shear_rate", "theta0", "omega0", "a", "b", "tol", "tol_lin", "cg_reg",
    "jac_refresh_angle",
}
_INT_FIELDS = {"cg_max_iter", "output_every", "wall_ramp_steps"}
_BOOL_FIELDS = {"stokes_mode", "predictor_corrector"}
_PAIR_FIELDS = {"gravity", "X0", "U0"}


def load_config(path: str) -> SimConfig:
    """Read an INI-style config; section names are ignored, keys must match
    SimConfig field names.  A ``scenario`` key selects the preset base."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    flat: dict[str, str] = {}
    for section in parser.sections():
        flat.update(parser.items(section))
    if parser.defaults():
        flat.update(parser.defaults())

    overrides: dict = {}
    base = flat.pop("scenario", "jeffery")
    for key, raw in flat.items():
        if key in _FLOAT_FIELDS:
            overrides[key] = float(raw)
        elif key in _INT_FIELDS:
            overrides[key] = int(raw)
        elif key in _BOOL_FIELDS:
            overrides[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif key in _PAIR_FIELDS:
            parts = [float(p) for p in raw.replace(",", " ").split()]
            if len(parts) != 2:
                raise ConfigError(f"{key} needs two numbers, got {raw!r}")
            overrides[key] = tuple(parts)
        elif key == "extents":
            parts = [float(p) for p in raw.replace(",", " ").split()]
            if len(parts) != 4:
                raise ConfigError(f"extents needs four numbers, got {raw!r}")
            overrides[key] = tuple(parts)
        elif key in ("wall_kind", "method"):
            overrides[key] = raw.strip()
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        cfg = scenario_config(base, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# simulation


@dataclass
class TimeSeriesRecord:
    t: float
    X: np.ndarray
    theta: float
    U: np.ndarray
    omega: float
    C1: np.ndarray
    C2: float
    J_final: float
    cg_iterations: int

    def row(self) -> list:
        return [
            self.t, self.X[0], self.X[1], self.theta,
            self.U[0], self.U[1], self.omega,
            self.C1[0], self.C1[1], self.C2,
            self.J_final, self.cg_iterations,
        ]


SERIES_HEADER = [
    "t", "X_x", "X_y", "theta", "U_x", "U_y", "omega",
    "C1_x", "C1_y", "C2", "J_final", "cg_iterations",
]


class Simulation:
    """Holds the discretization and advances the coupled system in time."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        cfg = config
        self.coarse = build_rect_mesh(cfg.extents, cfg.h1)
        self.osys = OmegaSystem(self.coarse, cfg.rho_f, cfg.mu, cfg.dt,
                                method=cfg.method, tol_lin=cfg.tol_lin)
        geom = EllipseGeom(cfg.a, cfg.b)
        self.ref_ellipse = build_ellipse_mesh(geom, cfg.resolved_h2())
        self.state = rigid.ParticleState(
            X=np.asarray(cfg.X0, dtype=float),
            theta=float(cfg.theta0),
            U=np.asarray(cfg.U0, dtype=float),
            omega=float(cfg.omega0),
            a=cfg.a, b=cfg.b, rho_s=cfg.rho_s,
        )
        self.wall_data = self.wall_field(self.osys.fine.vertices)
        self.body_force = np.tile(np.asarray(cfg.gravity, dtype=float),
                                  self.osys.fine.num_vertices)
        self.u = self.initial_velocity()
        self.p = np.zeros(self.osys.solver.n_pressure)
        self.t = 0.0
        self.step_index = 0
        self.last_cg: CgResult | None = None
        self._jac: np.ndarray | None = None
        self._jac_dirs: list | None = None
        self._jac_pose: tuple | None = None
        self._y_warm: np.ndarray | None = None

    # -- scenario fields --------------------------------------------------

    def wall_field(self, points: np.ndarray) -> np.ndarray:
        cfg = self.config
        out = np.zeros((len(points), 2))
        if cfg.wall_kind == "shear":
            y_mid = 0.5 * (cfg.extents[1] + cfg.extents[3])
            out[:, 0] = cfg.shear_rate * (points[:, 1] - y_mid)
        return out.ravel()

    def initial_velocity(self) -> np.ndarray:
        """Wall profile outside the particle, rigid motion inside.

        Extending the wall profile straight through the particle would hand
        the interior fluid an angular momentum inconsistent with the particle
        velocity; the momentum-balance force would then dump that mismatch on
        the particle in the first step as a large spurious kick.
        """
        cfg = self.config
        pts = self.osys.fine.vertices
        out = self.wall_field(pts).reshape(-1, 2)
        if cfg.wall_ramp_steps > 0:
            out[:] = 0.0                # walls start at rest and ramp up
        c, s = np.cos(cfg.theta0), np.sin(cfg.theta0)
        d = pts - np.asarray(cfg.X0, dtype=float)
        xb = c * d[:, 0] + s * d[:, 1]
        yb = -s * d[:, 0] + c * d[:, 1]
        inside = (xb / cfg.a) ** 2 + (yb / cfg.b) ** 2 <= 1.0
        U0 = np.asarray(cfg.U0, dtype=float)
        out[inside, 0] = U0[0] - cfg.omega0 * d[inside, 1]
        out[inside, 1] = U0[1] + cfg.omega0 * d[inside, 0]
        return out.ravel()

    # -- one step ---------------------------------------------------------

    def _wall_factor(self) -> float:
        """Wall-speed factor for the step being solved (ends at step_index+1)."""
        ramp = self.config.wall_ramp_steps
        if ramp <= 0:
            return 1.0
        return min(1.0, (self.step_index + 1) / ramp)

    def _make_bsystem(self, state: rigid.ParticleState) -> BSystem:
        cfg = self.config
        placed = place_mesh(self.ref_ellipse, state.X, state.theta)
        return BSystem(placed, state.X, cfg.rho_f, cfg.mu, cfg.dt,
                       no_slip=(cfg.ls == 0.0), method=cfg.method,
                       tol_lin=cfg.tol_lin)

    def _control_force_torque(self, step: LsfdStep, y: np.ndarray):
        """Net force and torque the control field exerts on the fluid, negated.

        Integrating the extended momentum equation over the particle domain
        gives the hydrodynamic load as interior momentum change minus control
        force; subtracting the rigid interior inertia analytically (it cancels
        the particle inertia up to the density ratio) reduces the generalized
        Newton law to

            (1 - rho_f/rho_s) M (V - V*)/dt = (1 - rho_f/rho_s) M g - rho_f int_B y dx

        plus the spin-moment analogue.  The right side below is that control
        load; the near-singular added-mass cancellation never appears
        numerically, which is what keeps the density-matched case stable.
        """
        bsys = step.bsys
        force = -self.config.rho_f * bsys.integrate(y)
        torque = -self.config.rho_f * float(bsys.spin @ (bsys.mass @ y))
        return np.array([force[0], force[1], torque])

    def _refresh_jacobian(self, step: LsfdStep, bsys: BSystem,
                          state: rigid.ParticleState, reg: float) -> None:
        """Force/torque response to unit rigid velocities at this placement.

        The discrete flow at a prescribed particle velocity V is affine in V,
        so three homogeneous solves along the unit translations and the unit
        rotation give the exact response matrix.  It varies smoothly with the
        placement and is reused until the particle has moved appreciably.
        """
        cfg = self.config
        nb = bsys.fine.num_vertices
        cols = []
        dirs = []
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1.0
            if self._jac_dirs is not None:
                y0 = self._jac_dirs[j].control.y
            else:
                y0 = np.zeros(2 * nb)
            sol = step.run_cg_y(
                Control(y0, cfg.dt * e[:2], cfg.dt * e[2]),
                homogeneous=True, tol=cfg.tol, max_iter=cfg.cg_max_iter, reg=reg,
            )
            cols.append(self._control_force_torque(step, sol.control.y))
            dirs.append(sol)
        self._jac = np.column_stack(cols)
        self._jac_dirs = dirs
        self._jac_pose = (state.X.copy(), state.theta)

    def _implicit_step(self, state: rigid.ParticleState):
        """Solve the coupled velocity step at this particle placement.

        The flow at a prescribed particle velocity V is found by minimizing
        the two-mesh mismatch over the control field alone, with the rigid
        trace imposed through the control corrections.  The force balance
        M dU/dt = M g + F(V) then closes the step implicitly: F is affine in
        V, so one base solve plus the cached unit-velocity response matrix
        turn the balance into a 3x3 linear system, and the flow fields at the
        new velocity follow by superposition at no extra solves.
        """
        cfg = self.config
        bsys = self._make_bsystem(state)
        rigid.check_clearance(bsys.fine, cfg.extents, cfg.h1)
        ctx = StepContext(
            u_star=self.u, wall_data=self._wall_factor() * self.wall_data,
            body_force=self.body_force,
            U_tilde=np.zeros(2), omega_tilde=0.0,
            dt=cfg.dt, rho_f=cfg.rho_f, mu=cfg.mu, ls=cfg.ls,
        )
        step = LsfdStep(self.osys, bsys, ctx)
        nb = bsys.fine.num_vertices
        # crude interior-stress prediction, kept only to report the
        # corrections C = dt (V - V~) alongside the converged velocities
        f_int, t_int = rigid.interior_surface_force_torque(
            bsys.fine, state.X, step.Svec @ self.u,
            step.S @ (self.osys.P @ self.p), cfg.mu,
        )
        U_tilde = (state.U + cfg.dt * np.asarray(cfg.gravity, dtype=float)
                   + (cfg.dt / state.mass) * f_int)
        omega_tilde = state.omega + (cfg.dt / state.inertia) * t_int
        reg = cfg.cg_reg * cfg.rho_f
        V0 = np.array([state.U[0], state.U[1], state.omega])

        # warm start from the previous step's field: the y-problem is strictly
        # convex, so this changes iteration count only, not the minimizer
        y0 = np.zeros(2 * nb) if self._y_warm is None else self._y_warm
        base = step.run_cg_y(
            Control(y0, cfg.dt * V0[:2], cfg.dt * V0[2]),
            homogeneous=False, tol=cfg.tol, max_iter=cfg.cg_max_iter, reg=reg,
        )
        self._y_warm = base.control.y
        b0 = self._control_force_torque(step, base.control.y)

        if (self._jac is None
                or abs(state.theta - self._jac_pose[1]) > cfg.jac_refresh_angle
                or np.linalg.norm(state.X - self._jac_pose[0]) > cfg.h1):
            self._refresh_jacobian(step, bsys, state, reg)
        jac = self._jac

        # beta M (V - V0)/dt = beta M g + F(V) with F affine in V; the control
        # load b0 and its response matrix carry the step impulse (one factor
        # dt already inside), so dividing by the mass matrix alone makes every
        # term a velocity
        beta = 1.0 - cfg.rho_f / cfg.rho_s
        S = np.diag([1.0 / state.mass, 1.0 / state.mass,
                     1.0 / state.inertia])
        gext = np.array([cfg.gravity[0], cfg.gravity[1], 0.0])
        # gravity enters unscaled: the control load already carries the full
        # buoyancy (it supplies the pressure support the gravity-free
        # fictitious interior lacks), so the density reduction applies only
        # to the inertia on the left side
        dV = np.linalg.solve(beta * np.eye(3) - S @ jac,
                             cfg.dt * gext + S @ b0)
        V = V0 + dV

        u1 = base.u1 + sum(dV[j] * self._jac_dirs[j].u1 for j in range(3))
        p1 = base.p1 + sum(dV[j] * self._jac_dirs[j].p1 for j in range(3))
        u2 = base.u2 + sum(dV[j] * self._jac_dirs[j].u2 for j in range(3))
        p2 = base.p2 + sum(dV[j] * self._jac_dirs[j].p2 for j in range(3))
        y = base.control.y + sum(dV[j] * self._jac_dirs[j].control.y
                                 for j in range(3))
        C1 = cfg.dt * (V[:2] - U_tilde)
        C2 = cfg.dt * (V[2] - omega_tilde)
        return CgResult(
            Control(y, C1, float(C2)), u1, p1, u2, p2,
            V[:2].copy(), float(V[2]), step.eval_J(u1, u2),
            base.iterations, base.diagnostics, base.stop_ratio,
        )

    def step(self) -> TimeSeriesRecord:
        cfg = self.config
        result = self._implicit_step(self.state)
        if cfg.predictor_corrector:
            # re-solve at the half-step placement, keep that velocity
            half = rigid.update_position(
                rigid.correct_velocity(self.state, result.control.C1,
                                       result.control.C2, cfg.dt,
                                       result.U, result.omega),
                0.5 * cfg.dt,
            )
            half = replace(half, U=result.U, omega=result.omega)
            result = self._implicit_step(half)
        self.last_cg = result

        u_new = result.u1
        if not cfg.stokes_mode:
            problem = AdvectionProblem(
                locator=self.osys.locator, carrier=u_new, field=u_new,
                dt=cfg.dt, wall_data=self._wall_factor() * self.wall_data,
                extents=cfg.extents,
            )
            u_new = advect(problem)
        self.u = u_new
        self.p = result.p1

        new_state = replace(self.state, U=result.U, omega=float(result.omega))
        self.state = rigid.update_position(new_state, cfg.dt)
        self.step_index += 1
        self.t = self.step_index * cfg.dt
        return TimeSeriesRecord(
            t=self.t, X=self.state.X.copy(), theta=self.state.theta,
            U=self.state.U.copy(), omega=self.state.omega,
            C1=result.control.C1.copy(), C2=float(result.control.C2),
            J_final=result.J, cg_iterations=result.iterations,
        )

    @property
    def n_steps(self) -> int:
        return int(round(self.config.t_final / self.config.dt))

    def initial_record(self) -> TimeSeriesRecord:
        return TimeSeriesRecord(
            t=0.0, X=self.state.X.copy(), theta=self.state.theta,
            U=self.state.U.copy(), omega=self.state.omega,
            C1=np.zeros(2), C2=0.0, J_final=np.nan, cg_iterations=0,
        )


# ---------------------------------------------------------------------------
# run orchestration


@dataclass
class RunResult:
    config: SimConfig
    records: list
    status: str                   # "completed" or "failed at step N: reason"
    out_dir: str | None
    gamma_fit: float | None = None
    p_fit: float | None = None
    wall_time: float = 0.0


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _snapshot(sim: Simulation, out_dir: str, index: int) -> None:
    p_fine = sim.osys.P @ sim.p
    write_vtk(
        os.path.join(out_dir, f"fields_{index:04d}.vtk"),
        sim.osys.fine,
        {"velocity": sim.u.reshape(-1, 2), "pressure": p_fine},
    )


def run_scenario(config: SimConfig, out_dir: str | None = None,
                 validated: bool | None = None,
                 progress=None) -> RunResult:
    """Run one scenario to t_final, writing the run directory if requested."""
    t0 = time.perf_counter()
    sim = Simulation(config)
    records = [sim.initial_record()]
    cg_rows = []
    status = "completed"
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if config.output_every:
            _snapshot(sim, out_dir, 0)

    for n in range(sim.n_steps):
        try:
            rec = sim.step()
        except Exception as exc:
            status = f"failed at step {n + 1}: {exc}"
            break
        records.append(rec)
        if sim.last_cg is not None:
            for k, J, gsq, lam, gam in sim.last_cg.diagnostics:
                cg_rows.append([n + 1, k, J, gsq, lam, gam])
        if out_dir is not None and config.output_every and (n + 1) % config.output_every == 0:
            _snapshot(sim, out_dir, n + 1)
        if progress is not None:
            progress(n + 1, sim.n_steps, rec)

    result = RunResult(config, records, status, out_dir,
                       wall_time=time.perf_counter() - t0)
    if config.scenario == "jeffery" and status == "completed" and len(records) >= 10:
        try:
            theta = np.array([r.theta for r in records[1:]])
            omega = np.array([r.omega for r in records[1:]])
            result.gamma_fit, result.p_fit = fit_jeffery(theta, omega)
        except ValueError:
            pass

    if out_dir is not None:
        _write_csv(os.path.join(out_dir, "series.csv"), SERIES_HEADER,
                   [r.row() for r in records])
        _write_csv(os.path.join(out_dir, "cg_diag.csv"),
                   ["step", "k", "J", "grad_sq", "lambda", "gamma"], cg_rows)
        _write_summary(result, os.path.join(out_dir, "summary.txt"), validated)
    return result


def _write_summary(result: RunResult, path: str, validated: bool | None) -> None:
    cfg = result.config
    lines = [
        f"scenario: {cfg.scenario}",
        f"status: {result.status}",
        f"steps: {len(result.records) - 1}",
        f"dt: {cfg.dt:g}",
        f"h1: {cfg.h1:g}",
        f"ls: {cfg.ls:g}",
        f"t_final: {cfg.t_final:g}",
        f"wall_time_s: {result.wall_time:.2f}",
    ]
    last = result.records[-1]
    lines.append(f"final_X: {last.X[0]:.10g} {last.X[1]:.10g}")
    lines.append(f"final_theta: {last.theta:.10g}")
    lines.append(f"final_U: {last.U[0]:.10g} {last.U[1]:.10g}")
    lines.append(f"final_omega: {last.omega:.10g}")
    if result.gamma_fit is not None:
        lines.append(f"gamma_fit: {result.gamma_fit:.6g}")
        lines.append(f"p_fit: {result.p_fit:.6g}")
    if validated is None:
        label = "not run (results unvalidated; run the check subcommand)"
    elif validated:
        label = "valid (self-check passed)"
    else:
        label = "INVALID (self-check failed)"
    lines.append(f"validation: {label}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# angular-velocity fit


def fit_jeffery(theta: np.ndarray, omega: np.ndarray) -> tuple[float, float]:
    """Least-squares fit of omega = (gamma/2)(-1 + p cos 2 theta).

    Returns (gamma, p).  Raises ValueError for fewer than 8 samples or a
    theta range too small to separate the two basis functions.
    """
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if theta.size < 8:
        raise ValueError("need at least 8 samples")
    c = np.cos(2.0 * theta)
    if c.max() - c.min() < 1e-3:
        raise ValueError("theta range too small for a stable fit")
    design = np.column_stack([np.ones_like(c), c])
    coef, _, rank, _ = np.linalg.lstsq(design, omega, rcond=None)
    if rank < 2:
        raise ValueError("rank-deficient fit design")
    beta0, beta1 = coef
    gamma = -2.0 * beta0
    if gamma == 0.0:
        raise ValueError("zero mean angular velocity; cannot extract p")
    return float(gamma), float(-beta1 / beta0)


def jeffery_period(gamma: float, p: float) -> float:
    """Tumbling period implied by the fitted law (full 2 pi of theta)."""
    if not (0.0 <= p < 1.0) or gamma <= 0:
        raise ValueError("need gamma > 0 and 0 <= p < 1")
    return 4.0 * np.pi / (gamma * np.sqrt(1.0 - p * p))


# ---------------------------------------------------------------------------
# built-in self-check


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check_gradient() -> CheckResult:
    """Adjoint gradient vs central differences on a coarse shear setup."""
    cfg = jeffery_config(h1=1.0 / 8.0, dt=1.0e-2, ls=0.05, tol=1e-12)
    sim = Simulation(cfg)
    bsys = sim._make_bsystem(sim.state)
    ctx = StepContext(
        u_star=sim.u, wall_data=sim.wall_data, body_force=sim.body_force,
        U_tilde=np.array([0.01, -0.02]), omega_tilde=-0.5,
        dt=cfg.dt, rho_f=cfg.rho_f, mu=cfg.mu, ls=cfg.ls,
    )
    step = LsfdStep(sim.osys, bsys, ctx)
    rng = np.random.default_rng(7)
    nb = bsys.fine.num_vertices
    worst = 0.0
    for _ in range(3):
        ctl = Control(rng.standard_normal(2 * nb), rng.standard_normal(2),
                      float(rng.standard_normal()))
        direction = Control(rng.standard_normal(2 * nb), rng.standard_normal(2),
                            float(rng.standard_normal()))
        u1, _, u2, _ = step.solve_state(ctl)
        pi2, _, pi1, _ = step.solve_adjoint(u1, u2)
        g = step.gradient(u1, u2, pi1, pi2)
        dJ_adj = step.inner(g, (direction.y, direction.C1, direction.C2))
        eps = 1e-4
        plus = Control(ctl.y + eps * direction.y, ctl.C1 + eps * direction.C1,
                       ctl.C2 + eps * direction.C2)
        minus = Control(ctl.y - eps * direction.y, ctl.C1 - eps * direction.C1,
                        ctl.C2 - eps * direction.C2)
        up1, _, up2, _ = step.solve_state(plus)
        um1, _, um2, _ = step.solve_state(minus)
        dJ_fd = (step.eval_J(up1, up2) - step.eval_J(um1, um2)) / (2.0 * eps)
        rel = abs(dJ_adj - dJ_fd) / max(abs(dJ_fd), 1e-14)
        worst = max(worst, rel)
    return CheckResult("adjoint gradient vs finite differences", worst <= 1e-4,
                       f"worst relative error {worst:.3e}")


def _check_rigidity() -> CheckResult:
    geom = EllipseGeom(0.25, 0.125)
    ref = refine_midpoint(build_ellipse_mesh(geom, 1.0 / 16.0))
    sig0 = rigid.pairwise_distance_signature(ref)
    worst = 0.0
    for center, theta in [((1.3, 0.4), 0.7), ((-2.0, 5.0), -2.9), ((0.0, 0.0), 13.0)]:
        placed = place_mesh(ref, center, theta)
        sig = rigid.pairwise_distance_signature(placed)
        worst = max(worst, float(np.max(np.abs(sig - sig0) / sig0)))
    return CheckResult("rigid placement preserves distances", worst <= 1e-12,
                       f"worst relative distance change {worst:.3e}")


def _check_divergence() -> CheckResult:
    cfg = jeffery_config(h1=1.0 / 8.0, dt=1.0e-2)
    sim = Simulation(cfg)
    solver = sim.osys.solver
    rhs = np.sin(np.arange(solver.A.shape[0]) * 0.37)
    div_rhs = sim.osys.div_rhs_for(sim.wall_data)
    gvals = sim.osys.constraint.gvals_from_field(sim.wall_data)
    u, _, _ = solver.solve(rhs, div_rhs, gvals)
    r = solver.G.T @ u - div_rhs
    w = solver.p_weights
    r = r - (w @ r) / (w @ w) * w       # the mean part is carried by the multiplier
    res = float(np.linalg.norm(r))
    return CheckResult("discrete divergence constraint", res <= 1e-9,
                       f"constraint residual {res:.3e}")


def builtin_check() -> list[CheckResult]:
    """Fast property suite backing the check subcommand."""
    return [_check_gradient(), _check_rigidity(), _check_divergence()]
