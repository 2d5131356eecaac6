"""Picard solver for the nonlinear flux system in one quadrant.

Both quadrants are solved on the upper quarter plane.  The lower flow is
reflected, (y1, y2) -> (y1, -y2) with v1 -> -v1 and v2 -> v2; the flux
equations keep their form because N1 = u2 is odd in v1 and N2 = p is even,
so the lower problem becomes an upper one with slip data -(g^-)'.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import gas
from .elliptic import (TAG_H, TAG_INTERIOR, MixedBVP, QuadrantGrid, ScalarField, assemble,
                       solve_linear)
from .geometry import BoundaryFn, extension_values

log = logging.getLogger(__name__)


class QuadrantError(RuntimeError):
    def __init__(self, message: str, side: int | None = None, history=None):
        super().__init__(message)
        self.side = side
        self.history = list(history or [])


class QuadrantConvergenceError(QuadrantError):
    pass


class SweepError(QuadrantError):
    """Ellipticity or smallness failed inside a sweep; shrink epsilon."""


@dataclass(frozen=True)
class SideSetup:
    """Background data and grid of one quadrant (reflected for side -1)."""

    side: int
    law: gas.GasLaw
    bg: gas.UniformState
    inv: gas.HydroInvariants
    grid: QuadrantGrid

    @property
    def v20(self) -> float:
        return 1.0 / self.inv.m1

    @property
    def a11_0(self) -> float:
        return float(gas.coeff_a(self.inv, gas.background_v(self.bg), self.law).a11)


def make_side(side: int, law: gas.GasLaw, bg: gas.UniformState, grid: QuadrantGrid) -> SideSetup:
    """Attach the background to a grid, stretching y2 by sqrt(a11(v0))."""
    bg.check_subsonic(law)
    inv = gas.hydro_invariants(bg, law)
    a11 = float(gas.coeff_a(inv, gas.background_v(bg), law).a11)
    return SideSetup(int(side), law, bg, inv, grid.restretch(np.sqrt(a11)))


# ---------------------------------------------------------------- pieces

def trapezoid_matrix(grid: QuadrantGrid) -> sp.csr_matrix:
    """T with (T f)(y1_i, y2_j) = trapezoid integral of f along row j from y1 = 0."""
    T = grid._ops.get("trap")
    if T is not None:
        return T
    rows, cols, vals = [], [], []
    for j in range(grid.shape[1]):
        idx = grid.index[:, j]
        idx = idx[idx >= 0]
        m = idx.size
        if m < 2:
            continue
        dx = np.diff(grid.y1[:m])
        # weight of f_k in the integral up to node i
        W = np.zeros((m, m))
        for i in range(1, m):
            W[i, :i] += 0.5 * dx[:i]
            W[i, 1:i + 1] += 0.5 * dx[:i]
        r, c = np.nonzero(W)
        rows.append(idx[r]); cols.append(idx[c]); vals.append(W[r, c])
    N = grid.n_nodes
    T = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    grid._ops["trap"] = T
    return T


def v2_operator(grid: QuadrantGrid) -> sp.csr_matrix:
    """P = T D2: maps a v1 perturbation to the v2 perturbation it induces."""
    P = grid._ops.get("P")
    if P is None:
        P = (trapezoid_matrix(grid) @ grid.operators().D2).tocsr()
        grid._ops["P"] = P
    return P


def reconstruct_v2(dv1: ScalarField) -> ScalarField:
    """delta v2 = int_0^{y1} d(delta v1)/dy2 along each row; zero on the entrance."""
    return ScalarField(dv1.grid, v2_operator(dv1.grid) @ dv1.values)


def boundary_data(bdry: BoundaryFn, grid: QuadrantGrid, side: int) -> np.ndarray:
    """Nodal Dirichlet data: the extension of side * g'."""
    y1, s2 = grid.coords(stretched=True)
    return extension_values(lambda t: side * bdry.gprime(np.maximum(t, 0.0)), y1, s2)


@dataclass
class Coefficients:
    a11: np.ndarray
    a12: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    da: tuple


def coefficients(setup: SideSetup, v1: np.ndarray, v2: np.ndarray) -> Coefficients:
    """a11, a12 at v and b_i = d/dy1 a1i by the chain rule."""
    V = gas.VelocityVars(v1, v2)
    c = gas.coeff_a(setup.inv, V, setup.law)
    da = gas.coeff_a_dv(setup.inv, V, setup.law)
    D1 = setup.grid.operators().D1
    D1v1, D1v2 = D1 @ v1, D1 @ v2
    b1 = da[0] * D1v1 + da[1] * D1v2
    b2 = da[2] * D1v1 + da[3] * D1v2
    return Coefficients(np.asarray(c.a11), np.asarray(c.a12), b1, b2, da)


def linearized_sweep(setup: SideSetup, v1: np.ndarray, v2: np.ndarray, data,
                     tau: float | None = 0.1, tol_rel: float = 1e-10) -> ScalarField:
    """Solve the divergence-form equation for the next v1 with coefficients frozen at v.

    ``data`` is either nodal Dirichlet data or a callable g'(t) that is
    extended into the quadrant.  Entrance condition a11 D1 + a12 D2 = 0.
    """
    grid = setup.grid
    if callable(data):
        y1, s2 = grid.coords(stretched=True)
        data = extension_values(data, y1, s2)
    co = coefficients(setup, v1, v2)
    N = grid.n_nodes
    bvp = MixedBVP(a11=co.a11, a12=co.a12, b1=co.b1, b2=co.b2, f=np.zeros(N),
                   dirichlet=np.asarray(data, float), mu1=co.a11, mu2=co.a12, g1=np.zeros(N),
                   a11_ref=setup.a11_0, tau=tau)
    try:
        system = assemble(bvp, grid)
    except ValueError as exc:
        raise SweepError(f"side {setup.side:+d}: {exc}", side=setup.side) from exc
    return ScalarField(grid, solve_linear(system, tol_rel))


# ---------------------------------------------------------------- solutions

@dataclass(eq=False)
class QuadrantSolution:
    """Converged v on one quadrant, stored in the solver (reflected) orientation.

    For side -1, ``v1`` holds -v1 of the lower flow at (y1, -y2); use
    ``v1_physical`` for the unreflected values.
    """

    side: int
    setup: SideSetup
    v1: ScalarField
    v2: ScalarField
    trace: list = field(default_factory=list)
    iterations: int = 0
    fixed_point_residual: float = 0.0
    seconds: float = 0.0

    @property
    def grid(self) -> QuadrantGrid:
        return self.setup.grid

    @property
    def v1_physical(self) -> np.ndarray:
        return self.side * self.v1.values

    def velocity_vars(self) -> gas.VelocityVars:
        return gas.VelocityVars(self.v1.values, self.v2.values)

    def state(self) -> gas.FlowState:
        """Nodal (rho, u1, u2, p) of the physical flow."""
        s = gas.state_from_v(self.setup.inv, self.velocity_vars(), self.setup.law)
        return gas.FlowState(s.rho, s.u1, self.side * np.asarray(s.u2), s.p)

    def pressure(self) -> np.ndarray:
        return np.asarray(gas.flux_N(self.setup.inv, self.velocity_vars(), self.setup.law)[1])

    def deviation(self) -> float:
        """sup |v - v0|."""
        return float(max(np.max(np.abs(self.v1.values)),
                         np.max(np.abs(self.v2.values - self.setup.v20))))

    def trace_dict(self) -> dict:
        return {"side": self.side, "iterations": self.iterations, "updates": list(self.trace),
                "fixed_point_residual": self.fixed_point_residual, "seconds": self.seconds}


def scheme_residual(setup: SideSetup, v1: np.ndarray, v2: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Rows of the discrete nonlinear system at v (interior, entrance, Dirichlet)."""
    grid = setup.grid
    ops = grid.operators()
    co = coefficients(setup, v1, v2)
    tags = grid.node_tags
    r = np.asarray(data, float) - v1
    inter = tags == TAG_INTERIOR
    lin = (co.a11 * (ops.D11 @ v1) + co.a12 * (ops.D12 @ v1) + ops.D22 @ v1
           + co.b1 * (ops.D1 @ v1) + co.b2 * (ops.D2 @ v1))
    r[inter] = lin[inter]
    onh = tags == TAG_H
    obl = co.a11 * (ops.D1 @ v1) + co.a12 * (ops.D2 @ v1)
    r[onh] = obl[onh]
    return r


def solve_quadrant(setup: SideSetup, bdry: BoundaryFn, tol: float = 1e-10, max_iter: int = 50,
                   relax: float = 1.0, tau: float | None = 0.1, v_init=None) -> QuadrantSolution:
    """Picard iteration v <- v0 + F(v - v0) with coefficients frozen at the previous iterate."""
    if not 0.5 <= relax <= 1.0:
        raise ValueError(f"relaxation must lie in [0.5, 1], got {relax}")
    t0 = time.perf_counter()
    grid = setup.grid
    side = setup.side
    data = boundary_data(bdry, grid, side)
    P = v2_operator(grid)
    N = grid.n_nodes
    if v_init is None:
        v1 = np.zeros(N)
        v2 = np.full(N, setup.v20)
    else:
        v1, v2 = (np.array(a, dtype=float) for a in v_init)
    history = []
    for it in range(1, max_iter + 1):
        try:
            new = linearized_sweep(setup, v1, v2, data, tau=tau).values
        except gas.GasError as exc:
            raise QuadrantError(f"side {side:+d}, iteration {it}: {exc}", side, history) from exc
        v1_new = v1 + relax * (new - v1)
        v2_new = setup.v20 + P @ v1_new
        upd = float(max(np.max(np.abs(v1_new - v1)), np.max(np.abs(v2_new - v2))))
        v1, v2 = v1_new, v2_new
        history.append(upd)
        log.debug("side %+d picard %d update %.3e", side, it, upd)
        if upd < tol:
            break
    else:
        raise QuadrantConvergenceError(
            f"side {side:+d}: Picard iteration did not reach {tol:g} in {max_iter} steps "
            f"(last update {history[-1]:.3e})", side, history)
    res = scheme_residual(setup, v1, v2, data)
    sol = QuadrantSolution(side, setup, ScalarField(grid, v1), ScalarField(grid, v2), history,
                           len(history), float(np.max(np.abs(res))), time.perf_counter() - t0)
    return sol


def flux_residual(sol: QuadrantSolution) -> np.ndarray:
    """D1 N1(v) + D2 N2(v) at interior nodes (NaN elsewhere), divergence form."""
    ops = sol.grid.operators()
    n1, n2 = gas.flux_N(sol.setup.inv, sol.velocity_vars(), sol.setup.law)
    res = ops.D1 @ np.asarray(n1) + ops.D2 @ np.asarray(n2)
    return np.where(sol.grid.node_tags == TAG_INTERIOR, res, np.nan)


# ---------------------------------------------------------------- physical

@dataclass(eq=False)
class PhysicalField:
    """Images of the grid nodes in physical coordinates with the flow state there."""

    side: int
    grid: QuadrantGrid
    y1: np.ndarray
    y2: np.ndarray          # signed Lagrangian coordinate
    x1: np.ndarray
    x2: np.ndarray
    state: gas.FlowState

    def streamlines(self):
        """One (x1, x2) polyline per grid row of constant y2."""
        out = []
        for j in range(self.grid.shape[1]):
            idx = self.grid.index[:, j]
            idx = idx[idx >= 0]
            if idx.size:
                out.append((self.x1[idx], self.x2[idx]))
        return out

    def as_columns(self) -> dict:
        s = self.state
        return {"side": np.full(self.x1.shape, self.side, dtype=float), "y1": self.y1,
                "y2": self.y2, "x1": self.x1, "x2": self.x2, "rho": np.asarray(s.rho),
                "u1": np.asarray(s.u1), "u2": np.asarray(s.u2), "p": np.asarray(s.p)}


def column_integral(grid: QuadrantGrid, f: np.ndarray) -> np.ndarray:
    """Trapezoid integral of f from y2 = 0 along each column (physical y2)."""
    F = np.zeros_like(f)
    y2 = grid.y2
    for i in range(grid.shape[0]):
        idx = grid.index[i, :]
        idx = idx[idx >= 0]
        m = idx.size
        if m < 2:
            continue
        vals = f[idx]
        F[idx[1:]] = np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(y2[:m]))
    return F


def to_physical(sol: QuadrantSolution, bdry: BoundaryFn) -> PhysicalField:
    """x1 = y1, x2 = g(y1) + int_0^{y2} v2 (mirrored below the slip line)."""
    grid = sol.grid
    y1, y2 = grid.coords()
    x2 = np.asarray(bdry.g(y1)) + sol.side * column_integral(grid, sol.v2.values)
    return PhysicalField(sol.side, grid, y1, sol.side * y2, y1.copy(), x2, sol.state())


def write_fields_csv(path, sols, physicals) -> None:
    """Both quadrants in one table: Lagrangian and physical coordinates, v and U."""
    blocks = []
    for sol, ph in zip(sols, physicals):
        cols = ph.as_columns()
        cols["v1"] = sol.v1_physical
        cols["v2"] = sol.v2.values
        blocks.append(cols)
    names = ["side", "y1", "y2", "x1", "x2", "v1", "v2", "rho", "u1", "u2", "p"]
    data = np.vstack([np.column_stack([b[n] for n in names]) for b in blocks])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def write_trace_json(path, sols) -> None:
    with open(path, "w") as fh:
        json.dump([s.trace_dict() for s in sols], fh, indent=2)
