"""Least-squares coupling of the global and particle flow problems.

The implicit velocity step is posed as an exact-controllability problem: find
a virtual control (y, C1, C2) -- a vector field on the particle domain plus a
translation and a rotation correction -- such that the flow solved on the
whole box agrees on the particle with the flow solved on the particle alone.
The mismatch functional

    J = 1/2 [ rho_f |u2 - I u1|^2_{L2(B)} + 2 mu dt |D(u2 - I u1)|^2_{L2(B)} ]

(I the nodal interpolation onto the particle mesh) is minimized by conjugate
gradient in the control space.  Its gradient comes from two adjoint solves:
pi2 on the particle, then pi1 on the box, giving

    g1 = rho_f (I pi1 + pi2)
    g2 = (rho_f/dt) int_B (u2 - I u1 - pi2) - (mu/ls) int_gamma pi2
    g3 = the matching angular moment of the same fields.

J is exactly quadratic in the control, so the conjugate gradient direction
("bar") solves are the state/adjoint solves with all affine data zeroed and
the control replaced by the search direction; with exact integration this
reproduces state differences and makes the line search exact.

For slip length zero the particle problem carries a full Dirichlet trace
u2 = u_B on gamma instead of the mu/ls boundary terms; every ls-weighted term
above is then dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import PointLocator, vector_interp
from .mesh import BoundaryTag, TriMesh, refine_midpoint
from .stokes import SaddleSolver


class CgNonconvergenceError(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class LossOfPositivityError(RuntimeError):
    """<H w, w> <= 0 in the line search: inner solves too inaccurate."""


@dataclass
class Control:
    """Virtual control: field on the particle mesh plus rigid corrections."""

    y: np.ndarray  # (2 Nb) interleaved
    C1: np.ndarray  # (2,)
    C2: float

    @classmethod
    def zero(cls, n_vertices: int) -> "Control":
        return cls(np.zeros(2 * n_vertices), np.zeros(2), 0.0)

    def copy(self) -> "Control":
        return Control(self.y.copy(), self.C1.copy(), float(self.C2))


@dataclass
class FieldSolve:
    """Flow fields for one control with the rigid blocks held fixed."""

    control: Control
    u1: np.ndarray
    p1: np.ndarray
    u2: np.ndarray
    p2: np.ndarray
    iterations: int
    diagnostics: list
    stop_ratio: float = np.nan


@dataclass
class CgResult:
    control: Control
    u1: np.ndarray
    p1: np.ndarray
    u2: np.ndarray
    p2: np.ndarray
    U: np.ndarray
    omega: float
    J: float
    iterations: int
    diagnostics: list  # rows (k, J, |g|^2, lambda, gamma)
    stop_ratio: float


class OmegaSystem:
    """Box-side discretization, reusable across time steps."""

    def __init__(self, coarse: TriMesh, rho_f: float, mu: float, dt: float,
                 method: str = "direct", tol_lin: float = 1e-10):
        self.coarse = coarse
        self.fine = refine_midpoint(coarse)
        self.constraint = fem.dirichlet_constraint(self.fine, BoundaryTag.OUTER_GAMMA)
        self.solver = SaddleSolver(self.fine, self.constraint, rho_f, mu, dt,
                                   method=method, tol_lin=tol_lin)
        self.mass = self.solver.mass
        self.P = self.solver.P
        self.locator = PointLocator(self.fine)

    def div_rhs_for(self, wall_data: np.ndarray) -> np.ndarray:
        flux = fem.assemble_normal_flux_rhs(self.fine, BoundaryTag.OUTER_GAMMA, wall_data)
        return self.P.T @ flux


class BSystem:
    """Particle-side discretization for one placement of the particle."""

    def __init__(self, placed_coarse: TriMesh, center, rho_f: float, mu: float,
                 dt: float, no_slip: bool, method: str = "direct",
                 tol_lin: float = 1e-10):
        self.coarse = placed_coarse
        self.fine = refine_midpoint(placed_coarse)
        self.center = np.asarray(center, dtype=float)
        if no_slip:
            self.constraint = fem.noslip_constraint(self.fine)
        else:
            self.constraint = fem.slip_constraint(self.fine)
        self.no_slip = no_slip
        self.solver = SaddleSolver(self.fine, self.constraint, rho_f, mu, dt,
                                   method=method, tol_lin=tol_lin)
        self.mass = self.solver.mass
        self.stiff_dt = (self.solver.A - rho_f * self.mass).tocsr()  # dt * 2mu D:D form
        self.P = self.solver.P
        self.bmass = fem.assemble_boundary_mass_gamma(self.fine)
        ms = fem.assemble_mass_scalar(self.fine)
        self.w_area = fem.integration_weights(ms)
        self.w_per = fem.integration_weights(
            fem.assemble_boundary_mass_scalar(self.fine, BoundaryTag.PARTICLE_GAMMA)
        )
        r = self.fine.vertices - self.center
        self.r = r
        self.spin = np.column_stack([-r[:, 1], r[:, 0]]).ravel()  # nodal (-r_y, r_x)

    def rigid_field(self, U, omega: float) -> np.ndarray:
        """Nodal values of U + omega x r on the particle mesh."""
        out = np.empty((self.fine.num_vertices, 2))
        out[:, 0] = U[0] - omega * self.r[:, 1]
        out[:, 1] = U[1] + omega * self.r[:, 0]
        return out.ravel()

    def div_rhs_for(self, trace_data: np.ndarray) -> np.ndarray:
        flux = fem.assemble_normal_flux_rhs(self.fine, BoundaryTag.PARTICLE_GAMMA, trace_data)
        return self.P.T @ flux

    def integrate(self, v: np.ndarray) -> np.ndarray:
        """int_B v dx, componentwise (exact for P1)."""
        return self.w_area @ v.reshape(-1, 2)

    def integrate_gamma(self, v: np.ndarray) -> np.ndarray:
        return self.w_per @ v.reshape(-1, 2)


@dataclass
class StepContext:
    """Frozen data entering one implicit velocity step."""

    u_star: np.ndarray          # previous velocity on the box fine mesh
    wall_data: np.ndarray       # Dirichlet data on Gamma (nodal, full vector)
    body_force: np.ndarray      # nodal body force on the box fine mesh
    U_tilde: np.ndarray
    omega_tilde: float
    dt: float
    rho_f: float
    mu: float
    ls: float                   # slip length; 0 selects the no-slip limit

    @property
    def no_slip(self) -> bool:
        return self.ls == 0.0


class LsfdStep:
    """One implicit step: state/adjoint solves, gradient, and the CG loop."""

    def __init__(self, osys: OmegaSystem, bsys: BSystem, ctx: StepContext):
        if bsys.no_slip != ctx.no_slip:
            raise ValueError("particle system constraint does not match slip length")
        self.osys = osys
        self.bsys = bsys
        self.ctx = ctx
        S = osys.locator.interp_matrix(bsys.fine.vertices)
        self.S = S
        self.Svec = vector_interp(S)
        self._div_omega = osys.div_rhs_for(ctx.wall_data)
        self._wall_gvals = osys.constraint.gvals_from_field(ctx.wall_data)
        g_on_b = self.Svec @ ctx.body_force
        self._f_body = ctx.rho_f * ctx.dt * (
            osys.mass @ ctx.body_force - self.Svec.T @ (bsys.mass @ g_on_b)
        )
        self._f_ustar_omega = ctx.rho_f * (osys.mass @ ctx.u_star)
        self._f_ustar_b = ctx.rho_f * (bsys.mass @ (self.Svec @ ctx.u_star))

    # -- state -----------------------------------------------------------

    def solve_state(self, control: Control, homogeneous: bool = False):
        """Solve the box and particle saddle problems for one control.

        With ``homogeneous=True`` all affine data (u*, walls, gravity, the
        rigid prediction) is zeroed: this is the linear part of the affine
        state map, used for the CG direction solves.
        """
        ctx = self.ctx
        bsys = self.bsys
        f = ctx.rho_f * (self.Svec.T @ (bsys.mass @ control.y))
        if not homogeneous:
            f = f + self._f_ustar_omega + self._f_body
            u1, p1, _ = self.osys.solver.solve(f, self._div_omega, self._wall_gvals)
        else:
            u1, p1, _ = self.osys.solver.solve(f)

        rigid_c = bsys.rigid_field(control.C1, control.C2)
        if homogeneous:
            trace = rigid_c / ctx.dt
        else:
            trace = bsys.rigid_field(ctx.U_tilde, ctx.omega_tilde) + rigid_c / ctx.dt
        fb = ctx.rho_f * (bsys.mass @ control.y)
        if not homogeneous:
            fb = fb + self._f_ustar_b
        if not ctx.no_slip:
            # dt*(Pi2 u1 - rigid_tilde) - rigid_c collapses to dt*(Pi2 u1 - trace)
            slip_src = ctx.dt * (self.Svec @ u1 - trace)
            fb = fb + (ctx.mu / ctx.ls) * (bsys.bmass @ slip_src)
        gvals = bsys.constraint.gvals_from_field(trace)
        u2, p2, _ = bsys.solver.solve(fb, bsys.div_rhs_for(trace), gvals)
        return u1, p1, u2, p2

    # -- functional, adjoint, gradient -----------------------------------

    def eval_J(self, u1: np.ndarray, u2: np.ndarray) -> float:
        w = u2 - self.Svec @ u1
        return 0.5 * float(
            self.ctx.rho_f * (w @ (self.bsys.mass @ w)) + w @ (self.bsys.stiff_dt @ w)
        )

    def solve_adjoint(self, u1: np.ndarray, u2: np.ndarray):
        ctx = self.ctx
        bsys = self.bsys
        w = u2 - self.Svec @ u1
        load = ctx.rho_f * (bsys.mass @ w) + bsys.stiff_dt @ w
        pi2, p_pi2, _ = bsys.solver.solve(load)
        rhs = -(self.Svec.T @ load)
        if not ctx.no_slip:
            rhs = rhs + (ctx.mu * ctx.dt / ctx.ls) * (self.Svec.T @ (bsys.bmass @ pi2))
        pi1, p_pi1, _ = self.osys.solver.solve(rhs)
        return pi2, p_pi2, pi1, p_pi1

    def gradient(self, u1, u2, pi1, pi2):
        ctx = self.ctx
        bsys = self.bsys
        g1 = ctx.rho_f * (self.Svec @ pi1 + pi2)
        z = u2 - self.Svec @ u1 - pi2
        g2 = (ctx.rho_f / ctx.dt) * bsys.integrate(z)
        g3 = (ctx.rho_f / ctx.dt) * float(bsys.spin @ (bsys.mass @ z))
        if not ctx.no_slip:
            coef = ctx.mu / ctx.ls
            g2 = g2 - coef * bsys.integrate_gamma(pi2)
            g3 = g3 - coef * float(bsys.spin @ (bsys.bmass @ pi2))
        return g1, g2, g3

    def inner(self, a, b) -> float:
        """Control-space inner product: mass-weighted L2 on B plus Euclidean."""
        return float(a[0] @ (self.bsys.mass @ b[0]) + a[1] @ b[1] + a[2] * b[2])

    # -- conjugate gradient ----------------------------------------------

    def run_cg_y(self, control: Control, homogeneous: bool = False,
                 tol: float = 1e-10, max_iter: int = 200,
                 reg: float = 0.0) -> FieldSolve:
        """Minimize over the field part y alone, with C1 and C2 held fixed.

        The rigid blocks enter only through the imposed trace, so this solves
        the flow at a prescribed particle velocity: the functional restricted
        to y is strictly convex once the small penalty reg is added, and the
        conjugate gradient below is the plain re-conjugated loop of run_cg
        restricted to the y block of the control space.
        """
        M = self.bsys.mass
        control = control.copy()
        u1, p1, u2, p2 = self.solve_state(control, homogeneous)
        pi2, _, pi1, _ = self.solve_adjoint(u1, u2)
        g = self.gradient(u1, u2, pi1, pi2)[0] + reg * control.y
        gg = float(g @ (M @ g))
        gg0 = gg
        diagnostics = [(0, self.eval_J(u1, u2), gg, np.nan, np.nan)]
        if gg == 0.0:
            return FieldSolve(control, u1, p1, u2, p2, 0, diagnostics, 0.0)
        history: list[tuple[np.ndarray, np.ndarray, float]] = []
        w = g.copy()
        k = -1
        for k in range(max_iter):
            wc = Control(w, np.zeros(2), 0.0)
            bu1, _, bu2, _ = self.solve_state(wc, homogeneous=True)
            bpi2, _, bpi1, _ = self.solve_adjoint(bu1, bu2)
            hw = self.gradient(bu1, bu2, bpi1, bpi2)[0] + reg * w
            gw = float(g @ (M @ w))
            denom = float(hw @ (M @ w))
            if denom <= 0.0:
                raise LossOfPositivityError(
                    f"<H w, w> = {denom:g} <= 0 at iteration {k}; "
                    "inner saddle solves are not accurate enough"
                )
            lam = gw / denom
            control.y = control.y - lam * w
            g = g - lam * hw
            gg = float(g @ (M @ g))
            diagnostics.append((k + 1, np.nan, gg, lam, np.nan))
            ratio = gg / max(gg0, float(control.y @ (M @ control.y)))
            if ratio <= tol:
                break
            history.append((w, M @ hw, denom))
            v = g.copy()
            for wj, hj_w, dj in history:
                v = v - (hj_w @ v) / dj * wj
            w = v
        else:
            raise CgNonconvergenceError(
                f"field CG did not reach tol {tol} in {max_iter} iterations",
                diagnostics,
            )
        u1, p1, u2, p2 = self.solve_state(control, homogeneous)
        return FieldSolve(control, u1, p1, u2, p2, k + 1, diagnostics, ratio)

    def run_cg(self, control0: Control | None = None, tol: float = 1e-10,
               max_iter: int = 200, reg: float = 0.0) -> CgResult:
        """Minimize J(control) + (reg/2) |control|^2 by conjugate gradient.

        The mismatch functional alone is nearly singular: a whole family of
        rigid-correction controls reaches its discretization floor, and the
        floor itself tilts with the corrections in a mesh-dependent way.  The
        small quadratic penalty makes the problem strictly convex and selects
        the smallest control on that family, which is the one carrying the
        physical particle velocities; reg is scaled like rho_f and must stay
        well below it so the penalty only acts along the flat directions.
        """
        ctx = self.ctx
        control = control0.copy() if control0 is not None else Control.zero(self.bsys.fine.num_vertices)
        if not (0.0 < tol < 1.0):
            raise ValueError("tol must lie in (0, 1)")
        if reg < 0.0:
            raise ValueError("reg must be nonnegative")

        u1, p1, u2, p2 = self.solve_state(control)
        J = self.eval_J(u1, u2)
        pi2, _, pi1, _ = self.solve_adjoint(u1, u2)
        g = list(self.gradient(u1, u2, pi1, pi2))
        if reg > 0.0:
            g[0] = g[0] + reg * control.y
            g[1] = g[1] + reg * control.C1
            g[2] = g[2] + reg * control.C2
            J = J + 0.5 * reg * self.inner(
                (control.y, control.C1, control.C2),
                (control.y, control.C1, control.C2),
            )
        gg = self.inner(g, g)
        gg0 = gg
        diagnostics = [(0, J, gg, np.nan, np.nan)]

        def stop_ratio(gsq, ctl):
            csq = self.inner((ctl.y, ctl.C1, ctl.C2), (ctl.y, ctl.C1, ctl.C2))
            denom = max(gg0, csq)
            return 0.0 if denom == 0.0 else gsq / denom

        ratio = stop_ratio(gg, control)
        if ratio <= tol:
            U = ctx.U_tilde + control.C1 / ctx.dt
            om = ctx.omega_tilde + control.C2 / ctx.dt
            return CgResult(control, u1, p1, u2, p2, U, om, J, 0, diagnostics, ratio)

        def pack(v):
            return np.concatenate([v[0], v[1], [v[2]]])

        def unpack(v):
            ny = v.size - 3
            return [v[:ny], v[ny:ny + 2], float(v[-1])]

        def weigh(v):
            # vector whose plain dot against pack(.) is the control inner product
            return np.concatenate([self.bsys.mass @ v[0], v[1], [v[2]]])

        w = pack(g)
        # past directions, kept to re-conjugate against: (w, <.,Hw> vector, <Hw,w>)
        history: list[tuple[np.ndarray, np.ndarray, float]] = []
        for k in range(max_iter):
            wl = unpack(w)
            wc = Control(wl[0], wl[1], wl[2])
            bu1, _, bu2, _ = self.solve_state(wc, homogeneous=True)
            bpi2, _, bpi1, _ = self.solve_adjoint(bu1, bu2)
            gbar = list(self.gradient(bu1, bu2, bpi1, bpi2))
            if reg > 0.0:
                gbar[0] = gbar[0] + reg * wl[0]
                gbar[1] = gbar[1] + reg * wl[1]
                gbar[2] = gbar[2] + reg * wl[2]
            gw = self.inner(g, wl)
            denom = self.inner(gbar, wl)
            if denom <= 0.0:
                raise LossOfPositivityError(
                    f"<H w, w> = {denom:g} <= 0 at iteration {k}; "
                    "inner saddle solves are not accurate enough"
                )
            lam = gw / denom
            control.y -= lam * wl[0]
            control.C1 -= lam * wl[1]
            control.C2 -= lam * wl[2]
            g[0] = g[0] - lam * gbar[0]
            g[1] = g[1] - lam * gbar[1]
            g[2] = g[2] - lam * gbar[2]
            J = J - lam * gw + 0.5 * lam * lam * denom
            gg_new = self.inner(g, g)
            ratio = stop_ratio(gg_new, control)
            history.append((w, weigh(gbar), denom))
            # conjugate the new gradient against every stored direction; the
            # classical two-term recurrence loses conjugacy to roundoff on
            # this ill-conditioned Hessian and stalls short of tol
            v = pack(g)
            gamma = 0.0
            for wj, hj_w, dj in history:
                gamma = (hj_w @ v) / dj
                v = v - gamma * wj
            diagnostics.append((k + 1, J, gg_new, lam, gamma))
            if ratio <= tol:
                break
            w = v
        else:
            raise CgNonconvergenceError(
                f"control CG did not reach tol {tol} in {max_iter} iterations "
                f"(last ratio {ratio:g})",
                diagnostics,
            )

        u1, p1, u2, p2 = self.solve_state(control)
        J = self.eval_J(u1, u2)
        U = ctx.U_tilde + control.C1 / ctx.dt
        om = ctx.omega_tilde + control.C2 / ctx.dt
        return CgResult(control, u1, p1, u2, p2, U, om, J, k + 1, diagnostics, ratio)
