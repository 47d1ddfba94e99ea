"""Generalized Stokes saddle-point solves.

Each solve handles the operator ``rho_f M + 2 mu dt K`` coupled to a coarse
P1 pressure through ``dt G``, on a constrained velocity space (Dirichlet on
the outer wall, or the nodal v.n elimination on the particle boundary).

Two interchangeable backends:

* ``direct`` -- one sparse LU of the bordered KKT system (the pressure mean
  is pinned through an extra multiplier).  Factored once, reused for every
  right-hand side; this is what the time loop uses.
* ``uzawa``  -- preconditioned conjugate gradient on the pressure Schur
  complement, velocity block factored once.  Preconditioner is the standard
  Cahouet-Chabard combination of the Neumann pressure Laplacian scaled by
  dt and the pressure mass matrix.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    DofConstraint,
    assemble_grad_p,
    assemble_mass_scalar,
    assemble_mass_vector,
    assemble_stiffness_scalar,
    assemble_stiffness_sym,
    integration_weights,
    prolongation,
)
from .mesh import TriMesh


class SolverError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals if residuals is not None else []


class CompatibilityError(ValueError):
    """Divergence data not orthogonal to the constant pressure."""


class SaddleSolver:
    """Factored solver for one mesh pair / one constrained space."""

    def __init__(
        self,
        fine: TriMesh,
        constraint: DofConstraint,
        rho_f: float,
        mu: float,
        dt: float,
        method: str = "direct",
        tol_lin: float = 1e-10,
        max_iter: int = 500,
    ):
        if method not in ("direct", "uzawa"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.tol_lin = tol_lin
        self.max_iter = max_iter
        self.dt = dt
        self.rho_f = rho_f
        self.mu = mu

        self.constraint = constraint
        self.P = prolongation(fine)
        self.mass = assemble_mass_vector(fine)
        stiff = assemble_stiffness_sym(fine, mu)
        self.A = (rho_f * self.mass + dt * stiff).tocsr()
        self.G = assemble_grad_p(fine, self.P)
        self.n_pressure = self.G.shape[1]

        coarse_mass = assemble_mass_scalar_from_fine(fine, self.P)
        self.p_weights = integration_weights(coarse_mass)
        self._coarse_mass = coarse_mass

        Z = constraint.Z
        self.A_c = (Z.T @ self.A @ Z).tocsc()
        self.G_c = (Z.T @ self.G).tocsr()

        if method == "direct":
            m = sp.csr_matrix(self.p_weights[:, None])
            kkt = sp.bmat(
                [
                    [self.A_c, dt * self.G_c, None],
                    [self.G_c.T, None, m],
                    [None, m.T, None],
                ],
                format="csc",
            )
            self._kkt_lu = spla.splu(kkt)
        else:
            self._A_lu = spla.splu(self.A_c)
            lap = assemble_stiffness_scalar_coarse(fine, self.P)
            # pin the constant mode; solutions are re-projected to zero mean
            e0 = sp.coo_matrix(([1.0], ([0], [0])), shape=lap.shape)
            self._lap_lu = spla.splu((lap + e0).tocsc())
            self._mass_lumped = np.asarray(coarse_mass.sum(axis=1)).ravel()

    # -- helpers ---------------------------------------------------------

    def _zero_mean(self, p: np.ndarray) -> np.ndarray:
        w = self.p_weights
        return p - (w @ p) / w.sum()

    def _check_compat(self, div_rhs_c: np.ndarray, scale: float) -> None:
        total = abs(float(np.sum(div_rhs_c)))
        if total > 1e-8 * max(scale, 1.0):
            raise CompatibilityError(
                f"divergence data incompatible with a closed boundary: sum={total:g}"
            )

    # -- solve -----------------------------------------------------------

    def solve(self, rhs, div_rhs=None, gvals=None):
        """Solve for (u, p); returns the full velocity vector, zero-mean
        pressure, and an info dict with the iteration history."""
        rhs = np.asarray(rhs, dtype=float)
        if div_rhs is None:
            div_rhs = np.zeros(self.n_pressure)
        if gvals is None:
            gvals = np.zeros(self.constraint.pinned_basis.shape[1])
        lift = self.constraint.lift(np.asarray(gvals, dtype=float))
        Z = self.constraint.Z
        f_c = Z.T @ (rhs - self.A @ lift)
        d_c = np.asarray(div_rhs, dtype=float) - self.G.T @ lift
        scale = np.linalg.norm(f_c) + np.linalg.norm(d_c)
        self._check_compat(d_c, scale)

        if self.method == "direct":
            full = np.concatenate([f_c, d_c, [0.0]])
            sol = self._kkt_lu.solve(full)
            u_c = sol[: Z.shape[1]]
            p = sol[Z.shape[1] : Z.shape[1] + self.n_pressure]
            info = {"iterations": 0, "residuals": []}
        else:
            u_c, p, info = self._uzawa(f_c, d_c)
        return Z @ u_c + lift, self._zero_mean(p), info

    def _precondition(self, r: np.ndarray) -> np.ndarray:
        z = self._lap_lu.solve(r)
        z = self._zero_mean(z)
        z *= self.rho_f / self.dt
        z += 2.0 * self.mu * (r / self._mass_lumped)
        return self._zero_mean(z)

    def _uzawa(self, f_c, d_c):
        Ainv = self._A_lu.solve
        Gc = self.G_c
        dt = self.dt

        u0 = Ainv(f_c)
        r = Gc.T @ u0 - d_c  # residual of the Schur system at p = 0
        p = np.zeros(self.n_pressure)
        z = self._precondition(r)
        w = z.copy()
        rz = r @ z
        r0 = np.linalg.norm(r)
        residuals = [r0]
        if r0 == 0.0:
            return u0, p, {"iterations": 0, "residuals": residuals}
        for it in range(self.max_iter):
            Aw = dt * (Gc.T @ Ainv(Gc @ w))
            alpha = rz / (w @ Aw)
            p += alpha * w
            r -= alpha * Aw
            res = np.linalg.norm(r)
            residuals.append(res)
            if res <= self.tol_lin * r0:
                u_c = Ainv(f_c - dt * (Gc @ p))
                return u_c, p, {"iterations": it + 1, "residuals": residuals}
            z = self._precondition(r)
            rz_new = r @ z
            w = z + (rz_new / rz) * w
            rz = rz_new
        raise SolverError(
            f"Uzawa iteration did not reach tol {self.tol_lin} in {self.max_iter} steps",
            residuals,
        )


def assemble_mass_scalar_from_fine(fine: TriMesh, P: sp.csr_matrix) -> sp.csr_matrix:
    """Exact coarse-pressure mass via the fine mesh (coarse P1 is fine P1)."""
    return (P.T @ assemble_mass_scalar(fine) @ P).tocsr()


def assemble_stiffness_scalar_coarse(fine: TriMesh, P: sp.csr_matrix) -> sp.csr_matrix:
    return (P.T @ assemble_stiffness_scalar(fine) @ P).tocsr()
