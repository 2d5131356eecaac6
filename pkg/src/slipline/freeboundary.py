"""Pressure-jump map T(eps, w), its differential, the flat-state inverse and
the Newton iteration for the slip line.

w is carried as nodal values on the bottom nodes t_0 = 1 < t_1 < ... < t_m = R
of the shared grid; both quadrants use the same node set in stretched
coordinates, which makes the flip of the lower quadrant exact.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import gas
from ._fitting import curve_fit_loglog
from .elliptic import (TAG_H, TAG_INTERIOR, TAG_S, LinearSystem, MixedBVP, QuadrantGrid, ScalarField,
                       assemble, build_grid, solve_linear)
from .geometry import Profile, SlipLine, boundary_fn, hermite_profile
from .nonlinear import (QuadrantError, QuadrantSolution, SideSetup, boundary_data, coefficients, make_side,
                        solve_quadrant, v2_operator)

log = logging.getLogger(__name__)


class NewtonDivergenceError(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


@dataclass(frozen=True)
class FreeBoundaryConfig:
    gamma: float = 1.4
    rho_plus: float = 1.0
    q_plus: float = 0.5
    rho_minus: float = 0.8
    q_minus: float = 0.6
    p0: float = 1.0
    h0: float = 0.5
    kstar: float = 0.2
    c_thick: float = 1.0
    alpha: float = 0.3
    beta: float = 0.5
    R: float = 16.0
    n_radial: int = 64
    grading: float = 2.0
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    relax: float = 1.0
    tau: float | None = 0.1
    tol_p: float = 1e-8
    max_newton: int = 20
    krylov: bool = False
    threads: int = 2
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FlatStateConstants:
    a_plus: float
    b_plus: float
    a_minus: float
    b_minus: float

    @property
    def stretch_plus(self) -> float:
        """sqrt(b/a): physical y2 per unit of stretched y2."""
        return float(np.sqrt(self.b_plus / self.a_plus))

    @property
    def stretch_minus(self) -> float:
        return float(np.sqrt(self.b_minus / self.a_minus))

    @property
    def jump_scale(self) -> float:
        return float(np.sqrt(self.a_plus * self.b_plus) + np.sqrt(self.a_minus * self.b_minus))


def flat_constants(law: gas.GasLaw, bg_plus: gas.UniformState,
                   bg_minus: gas.UniformState) -> FlatStateConstants:
    vals = []
    for bg in (bg_plus, bg_minus):
        J = gas.flux_jacobian(gas.hydro_invariants(bg, law), gas.background_v(bg), law)
        vals += [float(J[0, 0]), float(J[1, 1])]
    return FlatStateConstants(*vals)


@dataclass(eq=False)
class Problem:
    """Grids, backgrounds and profile for one configuration."""

    config: FreeBoundaryConfig
    law: gas.GasLaw
    profile: Profile
    plus: SideSetup
    minus: SideSetup
    flat: FlatStateConstants
    unit_grid: QuadrantGrid

    @property
    def t(self) -> np.ndarray:
        """Slip-line nodes, T first."""
        return self.unit_grid.slip_t()

    @property
    def slip_nodes(self) -> np.ndarray:
        return self.unit_grid.slip_nodes()

    def slip_line(self, eps: float, w) -> SlipLine:
        return SlipLine(float(eps), self.profile.h0, self.profile.kstar, self.t, np.asarray(w, float))

    def initial_w(self, eps: float) -> np.ndarray:
        """eps k* min(1, t^-beta)."""
        return eps * self.profile.kstar * np.minimum(1.0, self.t ** (-self.config.beta))

    @property
    def sides(self):
        return (self.plus, self.minus)


def build_problem(config: FreeBoundaryConfig) -> Problem:
    law = gas.GasLaw(config.gamma)
    bgp = gas.UniformState(config.rho_plus, config.q_plus, config.p0)
    bgm = gas.UniformState(config.rho_minus, config.q_minus, config.p0)
    base = build_grid(config.R, config.n_radial, config.grading)
    profile = hermite_profile(config.h0, config.kstar, config.c_thick)
    return Problem(config, law, profile, make_side(1, law, bgp, base), make_side(-1, law, bgm, base),
                   flat_constants(law, bgp, bgm), base.restretch(1.0))


# ---------------------------------------------------------------- T

@dataclass(eq=False)
class PressureJump:
    """[p] = N2+(v+) - N2-(v-) at the bottom nodes with y1 > 1."""

    t: np.ndarray
    values: np.ndarray
    solutions: tuple = ()

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _map_sides(problem: Problem, fn):
    if problem.config.threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            return tuple(pool.map(fn, problem.sides))
    return tuple(fn(s) for s in problem.sides)


def solve_both(problem: Problem, eps: float, w) -> tuple[QuadrantSolution, QuadrantSolution]:
    slip = problem.slip_line(eps, w)
    cfg = problem.config

    def run(setup: SideSetup):
        bdry = boundary_fn(problem.profile, slip, setup.side)
        return solve_quadrant(setup, bdry, tol=cfg.picard_tol, max_iter=cfg.picard_max_iter,
                              relax=cfg.relax, tau=cfg.tau)

    return _map_sides(problem, run)


def jump_from(problem: Problem, sols) -> PressureJump:
    k = problem.slip_nodes
    p = [s.pressure()[k] for s in sols]
    return PressureJump(problem.t[1:], p[0] - p[1], tuple(sols))


def eval_T(eps: float, w, problem: Problem) -> PressureJump:
    return jump_from(problem, solve_both(problem, eps, w))


# ---------------------------------------------------------------- DT

def _data_derivative(problem: Problem, setup: SideSetup, eps, w, d_eps, d_w) -> np.ndarray:
    """Derivative of the nodal Dirichlet data along (d_eps, d_w).

    The data are linear in (eps, w) except through the monotone cubic
    interpolant of w, so a central difference with a small relative step is
    used; the interpolant is positively homogeneous, which makes the
    difference exact at w = 0.
    """
    d_w = np.asarray(d_w, float)
    w = np.asarray(w, float)
    dn = max(np.max(np.abs(d_w)), abs(d_eps))
    if dn == 0.0:
        return np.zeros(setup.grid.n_nodes)
    scale = max(np.max(np.abs(w)), abs(eps))
    h = (1e-5 * scale if scale > 0 else 1.0) / dn

    def data(e, ww):
        slip = problem.slip_line(e, ww)
        return boundary_data(boundary_fn(problem.profile, slip, setup.side), setup.grid, setup.side)

    return (data(eps + h * d_eps, w + h * d_w) - data(eps - h * d_eps, w - h * d_w)) / (2 * h)


def discrete_jacobian(sol: QuadrantSolution) -> sp.csr_matrix:
    """Exact derivative of the discrete nonlinear system with respect to nodal v1.

    v2 depends on v1 through P = (row trapezoid) D2; the coefficient
    derivatives are those of the same finite-difference formulas the
    solver uses.  Rows carry the solver's sign convention (positive
    diagonal): interior and entrance rows are negated, Dirichlet rows are
    the identity.
    """
    setup = sol.setup
    grid = setup.grid
    ops = grid.operators()
    P = v2_operator(grid)
    u = sol.v1.values
    v2 = sol.v2.values
    co = coefficients(setup, u, v2)
    A1, A2, C1, C2 = co.da
    (A11, A12, A22), (C11, C12, C22) = gas.coeff_a_d2v(setup.inv, gas.VelocityVars(u, v2), setup.law)
    D1u, D2u = ops.D1 @ u, ops.D2 @ u
    D11u, D12u = ops.D11 @ u, ops.D12 @ u
    D1v2 = ops.D1 @ v2

    g1 = A1 * D1u + C1 * D2u
    b1 = A2 * D1u + C2 * D2u
    al1 = A1 * D11u + C1 * D12u + (A11 * D1u + A12 * D1v2) * D1u + (C11 * D1u + C12 * D1v2) * D2u
    al2 = A2 * D11u + C2 * D12u + (A12 * D1u + A22 * D1v2) * D1u + (C12 * D1u + C22 * D1v2) * D2u

    tags = grid.node_tags
    fi = (tags == TAG_INTERIOR).astype(float)
    fh = (tags == TAG_H).astype(float)
    fd = 1.0 - fi - fh
    D = sp.diags
    Jint = (D(co.a11) @ ops.D11 + D(co.a12) @ ops.D12 + ops.D22 + D(co.b1 + g1) @ ops.D1
            + D(co.b2) @ ops.D2 + D(b1) @ (ops.D1 @ P) + D(al1) + D(al2) @ P)
    Jh = (D(co.a11) @ ops.D1 + D(co.a12) @ ops.D2 + D(A1 * D1u + C1 * D2u)
          + D(A2 * D1u + C2 * D2u) @ P)
    J = -(D(fi) @ Jint + D(fh) @ Jh) + D(fd)
    J = J.tocsr()
    J.eliminate_zeros()
    return J


def _dp_side(sol: QuadrantSolution, dv1: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    P = v2_operator(sol.grid)
    dv2 = P @ dv1
    J = gas.flux_jacobian(sol.setup.inv, sol.velocity_vars(), sol.setup.law)
    return (J[..., 1, 0] * dv1 + J[..., 1, 1] * dv2)[nodes]


def eval_DT(eps: float, w, d_eps: float, d_w, problem: Problem, base=None,
            tol_rel: float = 1e-10) -> np.ndarray:
    """delta [p] on the slip nodes for the direction (d_eps, d_w).

    ``base`` may carry the quadrant solutions at (eps, w) (e.g. the
    ``solutions`` of a PressureJump) to avoid re-solving.
    """
    d_w = np.asarray(d_w, float)
    kst = problem.profile.kstar
    if abs(d_w[0] - d_eps * kst) > 1e-14 * (1 + abs(d_eps * kst)):
        raise ValueError("direction must satisfy d_w(1) = d_eps * kstar")
    sols = tuple(base) if base is not None else solve_both(problem, eps, w)
    nodes = problem.slip_nodes

    def one(sol: QuadrantSolution):
        setup = sol.setup
        dd = _data_derivative(problem, setup, eps, w, d_eps, d_w)
        fd = ~np.isin(setup.grid.node_tags, (TAG_INTERIOR, TAG_H))
        rhs = np.where(fd, dd, 0.0)
        if not np.any(rhs):
            return np.zeros(nodes.size)
        dv1 = solve_linear(LinearSystem(discrete_jacobian(sol), rhs, setup.grid), tol_rel)
        return _dp_side(sol, dv1, nodes)

    if problem.config.threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            dpp, dpm = pool.map(one, sols)
    else:
        dpp, dpm = (one(s) for s in sols)
    return dpp - dpm


# ---------------------------------------------------------------- flat inverse

def _tail_integral(s: np.ndarray, f: np.ndarray, R: float) -> float:
    """int_R^inf of a power-law continuation of f fitted on [R/4, R/2]; 0 unless decay beats 1/s."""
    fit = curve_fit_loglog(s, f, R / 4, R / 2)
    if not fit.binding or fit.slope >= -1.0:
        return 0.0
    sel = (s >= R / 4) & (s <= R / 2)
    sign = np.sign(np.mean(f[sel]))
    amp = np.exp(fit.intercept) * R ** fit.slope
    return float(sign * amp * R / (-fit.slope - 1.0))


@dataclass(eq=False)
class FlatInverse:
    """Fields of the two Laplace problems behind one application of the inverse."""

    dv2: ScalarField
    dv1: ScalarField
    G: np.ndarray
    dw: np.ndarray


def invert_DT0_fields(dp, problem: Problem, tol_rel: float = 1e-10,
                      far_tail: bool = False) -> FlatInverse:
    """The two Laplace solves of the flat inverse on the unit-stretch grid.

    The entrance data G(s) = -int_s^R d1 v2(0, s') ds' ends at R, which is
    exact for the truncated forward problem (v1 = 0 on the arc);
    ``far_tail`` adds the integral beyond R of a fitted power-law decay,
    approximating the untruncated problem instead.
    """
    grid = problem.unit_grid
    N = grid.n_nodes
    tags = grid.node_tags
    ops = grid.operators()
    bottom = grid.bottom()
    slip = problem.slip_nodes
    airfoil = bottom[1:grid.iT + 1]          # 0 < y1 <= 1
    dp = np.asarray(dp, float)
    if dp.shape != slip.shape:
        raise ValueError(f"pressure jump has {dp.size} values, expected {slip.size}")

    # (i) Laplace for the stretched v2: zero on H and O, Neumann on the
    # airfoil, prescribed on the slip segment.  On the arc the forward
    # problem has v1 = 0, so its conjugate has zero normal derivative there.
    arc = (tags == TAG_S)
    arc[grid.index[0, :][grid.index[0, :] >= 0]] = False
    arc[bottom] = False
    y1, s2 = grid.coords()
    r = np.hypot(y1, s2)
    obl = np.zeros(N, bool)
    obl[airfoil] = True
    obl |= arc
    d2 = np.zeros(N)
    d2[slip] = dp / problem.flat.jump_scale
    bvp = MixedBVP.laplace(grid, dirichlet=d2, oblique=obl)
    bvp.mu1 = np.where(arc, -y1 / np.maximum(r, 1e-300), 0.0)
    bvp.mu2 = np.where(arc, -s2 / np.maximum(r, 1e-300), 1.0)
    bvp.tau = None
    V2 = ScalarField(grid, solve_linear(assemble(bvp, grid), tol_rel) if np.any(d2) else np.zeros(N))

    # (ii) harmonic conjugate: G on H, zero on the airfoil and S, Neumann
    # d2 v1 = d1 v2 on the slip segment
    colH = grid.index[0, :]
    colH = colH[colH >= 0]
    s = grid.s2[:colH.size]
    f = (ops.D1 @ V2.values)[colH]
    tail = _tail_integral(s[1:], f[1:], grid.R) if far_tail else 0.0
    seg = 0.5 * (f[1:] + f[:-1]) * np.diff(s)
    upper = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])   # int_s^top
    G = -(upper + tail)
    d1 = np.zeros(N)
    h_nodes = colH[1:]
    d1[h_nodes] = G[1:]
    free = slip[:-1]                          # the node at y1 = R stays on S
    obl = np.zeros(N, bool)
    obl[free] = True
    g1 = np.zeros(N)
    g1[free] = (ops.D1 @ V2.values)[free]
    bvp = MixedBVP.laplace(grid, dirichlet=d1, g1=g1, oblique=obl)
    bvp.mu1 = np.zeros(N)
    bvp.mu2 = np.ones(N)
    rhs_any = np.any(d1) or np.any(g1)
    V1 = ScalarField(grid, solve_linear(assemble(bvp, grid), tol_rel) if rhs_any else np.zeros(N))
    dw = np.concatenate([[0.0], V1.values[slip]])
    return FlatInverse(V2, V1, G, dw)


def invert_DT0(dp, problem: Problem, tol_rel: float = 1e-10) -> np.ndarray:
    """delta w on the slip nodes (T first, where it vanishes) with D_wT(0,0) delta w = dp."""
    return invert_DT0_fields(dp, problem, tol_rel).dw


# ---------------------------------------------------------------- Newton

@dataclass(eq=False)
class NewtonResult:
    eps: float
    w: np.ndarray
    slip: SlipLine
    solutions: tuple
    jump: PressureJump
    trace: list = field(default_factory=list)
    converged: bool = False
    tol_p: float | None = None
    status: str = "max_steps"

    @property
    def steps(self) -> int:
        return len(self.trace) - 1

    def trace_dict(self) -> dict:
        return {"eps": self.eps, "converged": self.converged, "steps": self.steps,
                "tol_p": self.tol_p, "status": self.status, "trace": self.trace}


def _krylov_step(problem: Problem, eps, w, jump: PressureJump, tol_rel=1e-6) -> np.ndarray:
    """Solve D_wT(eps, w) dw = [p] by GMRES preconditioned with the flat inverse."""
    m = problem.t.size

    def apply(x):
        d = np.concatenate([[0.0], x])
        return eval_DT(eps, w, 0.0, d, problem, base=jump.solutions)

    def prec(y):
        return invert_DT0(y, problem)[1:]

    n = m - 1
    A = spla.LinearOperator((n, n), matvec=apply)
    M = spla.LinearOperator((n, n), matvec=prec)
    x, info = spla.gmres(A, jump.values, M=M, rtol=tol_rel, atol=0.0, restart=30, maxiter=5)
    if info != 0:
        log.warning("Krylov Newton step: GMRES info=%d", info)
    return np.concatenate([[0.0], x])


def solvability_pairing(t: np.ndarray, jump: np.ndarray) -> float:
    """Integral of [p](t) / sqrt(t^2 - 1) over the slip nodes.

    Written as a trapezoid sum in theta = arccosh(t); the first interval
    uses the value at the first node after T. The flat-state update leaves
    a fixed residual profile whose amplitude is proportional to this
    quantity, so it tracks the part of the jump the update cannot remove.
    """
    t = np.asarray(t, float)
    jump = np.asarray(jump, float)
    s = t[1:] if t.size == jump.size + 1 else t
    theta = np.concatenate([[0.0], np.arccosh(s)])
    f = np.concatenate([[jump[0]], jump])
    return float(np.trapezoid(f, theta))


def newton_solve(eps: float, problem: Problem, w_init=None, raise_on_divergence: bool = True) -> NewtonResult:
    """w <- w - invert_DT0([p]) until sup |[p]| <= tol_p."""
    cfg = problem.config
    w = problem.initial_w(eps) if w_init is None else np.array(w_init, float)
    trace = []
    increases = 0
    prev = np.inf
    status = "max_steps"
    for step in range(cfg.max_newton + 1):
        t0 = time.perf_counter()
        jump = eval_T(eps, w, problem)
        norm = jump.sup
        rec = {"step": step, "jump_sup": norm, "w_sup": float(np.max(np.abs(w))),
               "picard_iterations": [s.iterations for s in jump.solutions],
               "solvability_pairing": solvability_pairing(problem.t, jump.values)}
        trace.append(rec)
        log.info("eps=%g newton %d |[p]| = %.3e", eps, step, norm)
        if norm <= cfg.tol_p:
            rec["seconds"] = time.perf_counter() - t0
            return NewtonResult(eps, w, problem.slip_line(eps, w), jump.solutions, jump, trace, True,
                                cfg.tol_p, "converged")
        increases = increases + 1 if norm > prev else 0
        prev = norm
        if increases >= 3:
            msg = (f"Newton iteration diverging at eps={eps:g} (jump norm rose 3 times, now "
                   f"{norm:.3e}); try a smaller eps")
            if raise_on_divergence:
                raise NewtonDivergenceError(msg, trace)
            log.warning(msg)
            status = "diverged"
            break
        if step == cfg.max_newton:
            break
        dw = _krylov_step(problem, eps, w, jump) if cfg.krylov else invert_DT0(jump.values, problem)
        assert dw[0] == 0.0
        w = w - dw
        rec["dw_sup"] = float(np.max(np.abs(dw)))
        rec["seconds"] = time.perf_counter() - t0
    return NewtonResult(eps, w, problem.slip_line(eps, w), jump.solutions, jump, trace, False,
                        cfg.tol_p, status)


def eps0_probe(problem: Problem, candidates) -> float:
    """Largest candidate eps for which the Newton iteration converges (0.0 if none does).

    Candidates are tried in increasing order and the probe stops at the
    first failure, so the result is the end of the converged range.
    """
    best = 0.0
    for eps in sorted(float(e) for e in candidates):
        try:
            res = newton_solve(eps, problem, raise_on_divergence=False)
        except (QuadrantError, gas.GasError) as exc:
            log.info("eps0 probe: eps=%g failed (%s)", eps, exc)
            break
        if not res.converged:
            log.info("eps0 probe: eps=%g stopped with |[p]| = %.3e", eps, res.jump.sup)
            break
        best = eps
    return best
