"""Finite differences for the truncated mixed problem on a quarter disc.

The equation is

    a11 v_11 + a12 v_12 + v_22 + b1 v_1 + b2 v_2 = f

with Dirichlet data on the bottom L and outer boundary S and an oblique
condition mu1 v_1 + mu2 v_2 = g1 on the entrance H.  The mesh is a tensor
product of two smoothly graded 1-D maps built in stretched coordinates
(y1, s2) with y2 = s2 / stretch, so that for a11 = stretch**2 the principal
part is a multiple of the Laplacian in (y1, s2).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._fitting import FitResult, shell_fit

log = logging.getLogger(__name__)

TAG_INACTIVE, TAG_INTERIOR, TAG_H, TAG_L, TAG_S = -1, 0, 1, 2, 3
TAG_NAMES = {TAG_INTERIOR: "interior", TAG_H: "H", TAG_L: "L", TAG_S: "S"}


class GridError(ValueError):
    pass


class AssemblyError(ValueError):
    """Coefficient check failed at a node."""

    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


class EllipticityError(AssemblyError):
    pass


class SmallnessError(AssemblyError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


# ---------------------------------------------------------------- grids

def _graded_nodes(a: float, b: float, n: int, density, m_fine: int = 20001) -> np.ndarray:
    """n+1 nodes on [a, b] equidistributing the given point density."""
    x = np.linspace(a, b, m_fine)
    rho = density(x)
    F = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(x))])
    nodes = np.interp(np.linspace(0.0, F[-1], n + 1), F, x)
    nodes[0], nodes[-1] = a, b
    return nodes


def _density_y1(g: float, width: float, ell: float):
    def rho(y):
        bump = np.exp(-(y / width) ** 2) + np.exp(-((y - 1.0) / width) ** 2)
        return (1.0 + (g * g - 1.0) * bump) / (1.0 + (g - 1.0) * y / ell)
    return rho


def _density_s2(g: float, width: float, ell: float):
    def rho(s):
        return (1.0 + (g * g - 1.0) * np.exp(-(s / width) ** 2)) / (1.0 + (g - 1.0) * s / ell)
    return rho


@dataclass(eq=False)
class QuadrantGrid:
    """Truncated quarter disc {y1 >= 0, s2 >= 0, y1^2 + s2^2 <= R^2}.

    ``y1`` and ``s2`` are the 1-D node vectors; ``tag`` and ``index`` are
    (nx, ny) arrays over the tensor product, with -1 marking inactive
    nodes.  The physical second coordinate is y2 = s2 / stretch.
    """

    R: float
    n_radial: int
    grading: float
    stretch: float
    y1: np.ndarray
    s2: np.ndarray
    tag: np.ndarray
    index: np.ndarray
    iT: int
    _ops: dict = field(default_factory=dict, repr=False)

    @property
    def y2(self) -> np.ndarray:
        return self.s2 / self.stretch

    @property
    def n_nodes(self) -> int:
        return int(np.count_nonzero(self.index >= 0))

    @property
    def shape(self):
        return self.tag.shape

    @property
    def ij(self):
        ii, jj = np.nonzero(self.index >= 0)
        order = np.argsort(self.index[ii, jj])
        return ii[order], jj[order]

    @property
    def node_tags(self) -> np.ndarray:
        ii, jj = self.ij
        return self.tag[ii, jj]

    def coords(self, stretched: bool = False):
        ii, jj = self.ij
        second = self.s2[jj] if stretched else self.y2[jj]
        return self.y1[ii], second

    @property
    def r(self) -> np.ndarray:
        """Stretched distance to O."""
        y1, s2 = self.coords(stretched=True)
        return np.hypot(y1, s2)

    @property
    def r_T(self) -> np.ndarray:
        """Stretched distance to T = (1, 0)."""
        y1, s2 = self.coords(stretched=True)
        return np.hypot(y1 - 1.0, s2)

    @property
    def theta(self) -> np.ndarray:
        """Stretched polar angle about O."""
        y1, s2 = self.coords(stretched=True)
        return np.arctan2(s2, y1)

    @property
    def theta_T(self) -> np.ndarray:
        """Stretched polar angle about T."""
        y1, s2 = self.coords(stretched=True)
        return np.arctan2(s2, y1 - 1.0)

    @property
    def h_min(self) -> float:
        return float(min(np.diff(self.y1).min(), np.diff(self.s2).min()))

    def bottom(self) -> np.ndarray:
        """Node numbers of the row s2 = 0, ordered by y1."""
        return self.index[:, 0][self.index[:, 0] >= 0]

    def slip_nodes(self) -> np.ndarray:
        """Bottom nodes with y1 > 1."""
        b = self.bottom()
        return b[self.iT + 1:]

    def slip_t(self) -> np.ndarray:
        """y1 of the bottom nodes with y1 >= 1 (T included)."""
        b = self.bottom()
        return self.y1[: len(b)][self.iT:]

    def restretch(self, stretch: float) -> "QuadrantGrid":
        """Same node set with a different physical y2 scaling."""
        return QuadrantGrid(self.R, self.n_radial, self.grading, float(stretch), self.y1,
                            self.s2, self.tag, self.index, self.iT)

    def to_2d(self, values: np.ndarray) -> np.ndarray:
        out = np.full(self.shape, np.nan)
        ii, jj = self.ij
        out[ii, jj] = values
        return out

    def operators(self) -> "GridOperators":
        ops = self._ops.get("ops")
        if ops is None:
            ops = _build_operators(self)
            self._ops["ops"] = ops
        return ops


def build_grid(R: float, n_radial: int, grading_strength: float = 2.0, stretch: float = 1.0,
               width: float = 0.3, ell: float = 2.0) -> QuadrantGrid:
    """Graded tensor-product quarter-disc grid.

    ``n_radial`` intervals span [0, R] along y1; the node y1 = 1 is pinned.
    The point density carries Gaussian bumps of height grading**2 - 1 at
    O and T and decays like 1/(1 + (grading-1) y/ell) toward R, so
    grading = 1 gives a uniform mesh.
    """
    if not R > 4:
        raise GridError(f"R must exceed 4, got {R}")
    if int(n_radial) != n_radial or n_radial < 16:
        raise GridError(f"n_radial must be an integer >= 16, got {n_radial}")
    if not grading_strength >= 1.0:
        raise GridError(f"grading_strength must be >= 1, got {grading_strength}")
    if not stretch > 0:
        raise GridError(f"stretch must be positive, got {stretch}")
    n = int(n_radial)
    g = float(grading_strength)
    d1 = _density_y1(g, width, ell)
    fine = np.linspace(0.0, R, 40001)
    F = np.concatenate([[0.0], np.cumsum(0.5 * (d1(fine[1:]) + d1(fine[:-1])) * np.diff(fine))])
    F1 = np.interp(1.0, fine, F)
    m = int(np.clip(round(n * F1 / F[-1]), 2, n - 2))
    y1 = np.concatenate([_graded_nodes(0.0, 1.0, m, d1), _graded_nodes(1.0, R, n - m, d1)[1:]])

    d2 = _density_s2(g, width, ell)
    F2 = np.concatenate([[0.0], np.cumsum(0.5 * (d2(fine[1:]) + d2(fine[:-1])) * np.diff(fine))])
    n2 = max(8, int(round(n * F2[-1] / F[-1])))
    s2 = _graded_nodes(0.0, R, n2, d2)

    Y1, S2 = np.meshgrid(y1, s2, indexing="ij")
    active = Y1 ** 2 + S2 ** 2 <= R * R * (1.0 + 1e-12)
    nx, ny = active.shape
    pad = np.zeros((nx + 2, ny + 2), dtype=bool)
    pad[1:-1, 1:-1] = active
    all_nb = np.ones_like(active)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            all_nb &= pad[1 + di:nx + 1 + di, 1 + dj:ny + 1 + dj]

    tag = np.full(active.shape, TAG_INACTIVE, dtype=np.int8)
    tag[active] = TAG_S
    tag[all_nb] = TAG_INTERIOR
    h_ok = active.copy()
    h_ok[:, 1:] &= active[:, :-1]
    h_ok[:, :-1] &= active[:, 1:]
    h_ok[:, -1] = False
    h_ok[:-2, :] &= active[1:-1, :] & active[2:, :]
    col0 = np.zeros_like(active)
    col0[0, 1:] = True
    tag[col0 & h_ok] = TAG_H
    tag[:, 0][active[:, 0]] = TAG_L

    index = np.full(active.shape, -1, dtype=np.int64)
    index[active] = np.arange(np.count_nonzero(active))
    iT = int(np.argmin(np.abs(y1 - 1.0)))
    assert y1[iT] == 1.0
    return QuadrantGrid(float(R), n, g, float(stretch), y1, s2, tag, index, iT)


# ---------------------------------------------------------------- stencils

def d1_weights(hm, hp):
    """Centered first derivative on (x-hm, x, x+hp)."""
    return -hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))


def d2_weights(hm, hp):
    """Centered second derivative on (x-hm, x, x+hp)."""
    return 2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp))


def d1_forward(h1, h2):
    """One-sided first derivative at x from (x, x+h1, x+h1+h2)."""
    return -(2 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))


@dataclass(frozen=True)
class GridOperators:
    """Sparse difference operators on the active nodes.

    D1/D2 are first derivatives: centered where both neighbours exist,
    otherwise three-point one-sided.  D11, D22, D12 are centered and
    have empty rows where a neighbour is missing.
    """

    D1: sp.csr_matrix
    D2: sp.csr_matrix
    D11: sp.csr_matrix
    D22: sp.csr_matrix
    D12: sp.csr_matrix


def _axis_ops(grid: QuadrantGrid, axis: int, coord: np.ndarray):
    idx = grid.index
    N = grid.n_nodes
    ii, jj = grid.ij
    pos = (ii, jj)[axis]
    nmax = idx.shape[axis]

    def nb(k):
        p = pos + k
        ok = (p >= 0) & (p < nmax)
        out = np.full(N, -1)
        pc = np.clip(p, 0, nmax - 1)
        out[ok] = (idx[pc, jj] if axis == 0 else idx[ii, pc])[ok]
        return out

    m1, p1, m2, p2 = nb(-1), nb(1), nb(-2), nb(2)
    rows1, cols1, vals1 = [], [], []
    rows2, cols2, vals2 = [], [], []
    rowsC, colsC, valsC = [], [], []
    node = np.arange(N)
    x = coord[pos]

    cen = (m1 >= 0) & (p1 >= 0)
    hm = x[cen] - coord[pos[cen] - 1]
    hp = coord[pos[cen] + 1] - x[cen]
    for w, c in zip(d1_weights(hm, hp), (m1[cen], node[cen], p1[cen])):
        rows1.append(node[cen]); cols1.append(c); vals1.append(w)
        rowsC.append(node[cen]); colsC.append(c); valsC.append(w)
    for w, c in zip(d2_weights(hm, hp), (m1[cen], node[cen], p1[cen])):
        rows2.append(node[cen]); cols2.append(c); vals2.append(w)

    fwd = ~cen & (p1 >= 0) & (p2 >= 0)
    h1 = coord[pos[fwd] + 1] - x[fwd]
    h2 = coord[pos[fwd] + 2] - coord[pos[fwd] + 1]
    for w, c in zip(d1_forward(h1, h2), (node[fwd], p1[fwd], p2[fwd])):
        rows1.append(node[fwd]); cols1.append(c); vals1.append(w)

    bwd = ~cen & ~fwd & (m1 >= 0) & (m2 >= 0)
    h1 = x[bwd] - coord[pos[bwd] - 1]
    h2 = coord[pos[bwd] - 1] - coord[pos[bwd] - 2]
    for w, c in zip(d1_forward(h1, h2), (node[bwd], m1[bwd], m2[bwd])):
        rows1.append(node[bwd]); cols1.append(c); vals1.append(-w)

    def mk(r, c, v):
        if not r:
            return sp.csr_matrix((N, N))
        return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                             shape=(N, N))

    return mk(rows1, cols1, vals1), mk(rows2, cols2, vals2), mk(rowsC, colsC, valsC)


def _fill_isolated(grid: QuadrantGrid, D: sp.csr_matrix, axis: int) -> sp.csr_matrix:
    """Rows left empty (a single node along ``axis``, e.g. the tip of the arc)
    are extrapolated linearly from the two previous nodes along the other axis."""
    empty = np.flatnonzero(np.diff(D.indptr) == 0)
    if empty.size == 0:
        return D
    D = D.tolil()
    ii, jj = grid.ij
    coord = grid.y2 if axis == 0 else grid.y1
    for k in empty:
        i, j = ii[k], jj[k]
        pos = j if axis == 0 else i
        if pos < 2:
            continue
        a, b = ((grid.index[i, j - 1], grid.index[i, j - 2]) if axis == 0
                else (grid.index[i - 1, j], grid.index[i - 2, j]))
        if a < 0 or b < 0:
            continue
        lam = (coord[pos] - coord[pos - 1]) / (coord[pos - 1] - coord[pos - 2])
        D[k] = (1 + lam) * D[a] - lam * D[b]
    return D.tocsr()


def _build_operators(grid: QuadrantGrid) -> GridOperators:
    D1, D11, D1c = _axis_ops(grid, 0, grid.y1)
    D2, D22, D2c = _axis_ops(grid, 1, grid.y2)
    D1 = _fill_isolated(grid, D1.tocsr(), 0)
    D2 = _fill_isolated(grid, D2.tocsr(), 1)
    interior = (grid.node_tags == TAG_INTERIOR).astype(float)
    D12 = sp.diags(interior) @ (D1c @ D2c)
    return GridOperators(D1, D2, D11.tocsr(), D22.tocsr(), D12.tocsr())


# ---------------------------------------------------------------- fields

@dataclass(eq=False)
class ScalarField:
    grid: QuadrantGrid
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError("field size does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite values")

    def d1(self) -> np.ndarray:
        return self.grid.operators().D1 @ self.values

    def d2(self) -> np.ndarray:
        return self.grid.operators().D2 @ self.values

    def to_2d(self) -> np.ndarray:
        return self.grid.to_2d(self.values)

    def to_csv(self, path) -> None:
        y1, y2 = self.grid.coords()
        np.savetxt(path, np.column_stack([y1, y2, self.values]), delimiter=",",
                   header="y1,y2,value", comments="", fmt="%.17g")


def field_from_function(grid: QuadrantGrid, fn, stretched: bool = False) -> ScalarField:
    y1, y2 = grid.coords(stretched=stretched)
    return ScalarField(grid, fn(y1, y2))


# ---------------------------------------------------------------- problem

@dataclass(eq=False)
class MixedBVP:
    """Coefficients and data of the mixed problem on a given grid.

    All arrays are nodal (length N).  Rows of interior nodes use the
    equation, rows flagged in ``oblique`` use mu1 D1 + mu2 D2 = g1, every
    other node is Dirichlet with ``dirichlet``.  By default the oblique set
    is H.  ``a11_ref`` normalises the smallness checks (the flat value of
    a11, i.e. stretch**2 unless given).
    """

    a11: np.ndarray
    a12: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    f: np.ndarray
    dirichlet: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    g1: np.ndarray
    oblique: np.ndarray | None = None
    a11_ref: float | None = None
    tau: float | None = 0.1

    @classmethod
    def laplace(cls, grid: QuadrantGrid, dirichlet=None, g1=None, f=None, **kw) -> "MixedBVP":
        """Flat problem a11 = stretch**2, a12 = b = 0, mu = (1, 0)."""
        N = grid.n_nodes
        z = np.zeros(N)
        return cls(a11=np.full(N, grid.stretch ** 2), a12=z.copy(), b1=z.copy(), b2=z.copy(),
                   f=z.copy() if f is None else np.asarray(f, float),
                   dirichlet=z.copy() if dirichlet is None else np.asarray(dirichlet, float),
                   mu1=np.ones(N), mu2=z.copy(),
                   g1=z.copy() if g1 is None else np.asarray(g1, float), **kw)


@dataclass(eq=False)
class LinearSystem:
    A: sp.csr_matrix
    rhs: np.ndarray
    grid: QuadrantGrid | None = None

    def to_coo_text(self, path) -> None:
        """Dump as 'row col value' lines plus a header carrying the shape."""
        coo = self.A.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")
            fh.write("# rhs\n")
            for v in self.rhs:
                fh.write(f"{v:.17g}\n")


def _node_name(grid: QuadrantGrid, k: int) -> str:
    ii, jj = grid.ij
    i, j = int(ii[k]), int(jj[k])
    return (f"node {k} (i={i}, j={j}, y1={grid.y1[i]:.6g}, y2={grid.y2[j]:.6g}, "
            f"{TAG_NAMES.get(int(grid.tag[i, j]), '?')})")


def _check(bvp: MixedBVP, grid: QuadrantGrid, interior: np.ndarray, obl: np.ndarray):
    a11, a12 = np.asarray(bvp.a11, float), np.asarray(bvp.a12, float)
    margin = a11 - 0.25 * a12 ** 2
    bad = interior & ~(margin > 0)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise EllipticityError(f"non-elliptic coefficients at {_node_name(grid, k)}: "
                               f"a11 - (a12/2)^2 = {margin[k]:.6g}", node=k)
    tags = grid.node_tags
    on_h = obl & (tags == TAG_H)
    on_l = obl & (tags == TAG_L)
    mu1, mu2 = np.asarray(bvp.mu1, float), np.asarray(bvp.mu2, float)
    for mask, normal, name in ((on_h, mu1, "mu1"), (on_l, mu2, "mu2")):
        badn = mask & ~(normal > 0)
        if np.any(badn):
            k = int(np.flatnonzero(badn)[0])
            raise EllipticityError(f"oblique condition not transversal ({name} <= 0) at "
                                   f"{_node_name(grid, k)}", node=k)
    if bvp.tau is None:
        return
    tau = bvp.tau
    ref = bvp.a11_ref if bvp.a11_ref is not None else grid.stretch ** 2
    sq = np.sqrt(ref)
    dev = np.zeros(grid.n_nodes)
    dev[interior] = np.maximum(np.abs(a11[interior] / ref - 1.0), np.abs(a12[interior]) / sq)
    rO, rT = grid.r, grid.r_T
    wgt = np.minimum(np.minimum(rO, rT), 1.0)
    bnorm = wgt * np.hypot(np.asarray(bvp.b1, float) / ref, np.asarray(bvp.b2, float) / sq)
    dev[interior] = np.maximum(dev[interior], bnorm[interior])
    # tangential part of mu after normalisation in stretched coordinates
    dev[on_h] = np.abs(mu2[on_h]) * grid.stretch / mu1[on_h]
    dev[on_l] = np.abs(mu1[on_l]) / (mu2[on_l] * grid.stretch)
    if np.any(dev > tau):
        k = int(np.argmax(dev))
        raise SmallnessError(f"coefficient perturbation {dev[k]:.4g} exceeds budget tau={tau} at "
                             f"{_node_name(grid, k)}", node=k)


def assemble(bvp: MixedBVP, grid: QuadrantGrid) -> LinearSystem:
    """One row per node; rows are signed so that the diagonal is positive."""
    N = grid.n_nodes
    ops = grid.operators()
    tags = grid.node_tags
    interior = tags == TAG_INTERIOR
    obl = (tags == TAG_H) if bvp.oblique is None else np.asarray(bvp.oblique, bool) & ~interior
    dirich = ~interior & ~obl
    _check(bvp, grid, interior, obl)

    fi = interior.astype(float)
    fo = obl.astype(float)
    Aint = (sp.diags(np.asarray(bvp.a11) * fi) @ ops.D11 + sp.diags(np.asarray(bvp.a12) * fi) @ ops.D12
            + sp.diags(fi) @ ops.D22 + sp.diags(np.asarray(bvp.b1) * fi) @ ops.D1
            + sp.diags(np.asarray(bvp.b2) * fi) @ ops.D2)
    Aobl = sp.diags(np.asarray(bvp.mu1) * fo) @ ops.D1 + sp.diags(np.asarray(bvp.mu2) * fo) @ ops.D2
    A = -(Aint + Aobl) + sp.diags(dirich.astype(float))
    rhs = np.where(interior, -np.asarray(bvp.f, float), 0.0)
    rhs = np.where(obl, -np.asarray(bvp.g1, float), rhs)
    rhs = np.where(dirich, np.asarray(bvp.dirichlet, float), rhs)
    A = A.tocsr()
    A.eliminate_zeros()
    diag = A.diagonal()
    if np.any(diag <= 0):
        k = int(np.flatnonzero(diag <= 0)[0])
        raise AssemblyError(f"non-positive diagonal at {_node_name(grid, k)}", node=k)
    return LinearSystem(A, rhs, grid)


def _factor(A, drop_tol: float, fill_factor: float):
    """Incomplete LU; a tighter ILU and then exact LU if the factor breaks down."""
    for dt, ff in ((drop_tol, fill_factor), (drop_tol * 1e-3, max(fill_factor, 30.0) * 2)):
        try:
            return spla.spilu(A, drop_tol=dt, fill_factor=ff)
        except RuntimeError as exc:
            log.warning("incomplete LU failed (drop_tol=%g, fill=%g): %s", dt, ff, exc)
    try:
        return spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"matrix is singular: {exc}", residual=float("inf")) from None


def solve_linear(system: LinearSystem, tol_rel: float = 1e-10, maxiter: int = 400,
                 drop_tol: float = 1e-6, fill_factor: float = 30.0) -> np.ndarray:
    """Preconditioned GMRES (incomplete LU); checks the true relative residual.

    Rows are scaled to unit max-norm first: Dirichlet rows are O(1) and
    difference rows O(h^-2), and without the scaling the residual floor set
    by rounding reaches 1e-10 on fine grids.
    """
    A, b = system.A, np.asarray(system.rhs, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    scale = 1.0 / np.asarray(abs(A).max(axis=1).todense()).ravel()
    A = (sp.diags(scale) @ A).tocsc()
    b = scale * b
    bnorm = np.linalg.norm(b)
    ilu = _factor(A, drop_tol, fill_factor)
    M = spla.LinearOperator(A.shape, ilu.solve)
    x = ilu.solve(b)
    res = np.linalg.norm(b - A @ x) / bnorm
    info = 0
    # GMRES on the true residual; a few restarts of the correction
    # equation recover accuracy lost to rounding inside the Arnoldi loop
    for _ in range(4):
        if res <= tol_rel:
            break
        r = b - A @ x
        dx, info = spla.gmres(A, r, M=M, rtol=0.5 * tol_rel * bnorm / np.linalg.norm(r),
                              atol=0.0, restart=60, maxiter=maxiter)
        x = x + dx
        res = np.linalg.norm(b - A @ x) / bnorm
    if res > tol_rel:
        raise SolverError(f"GMRES did not reach rtol {tol_rel:g} (info={info}, residual {res:.3e})",
                          residual=float(res))
    return x


def decay_fit(field: ScalarField, lo: float = 0.25, hi: float = 0.5) -> FitResult:
    g = field.grid
    return shell_fit(g.r, field.values, lo * g.R, hi * g.R, theta=g.theta)


def corner_fit(field: ScalarField, corner: str = "T", rmax: float = 0.5) -> FitResult:
    """Slope of shell-averaged |v - v(corner)| against distance to the corner."""
    g = field.grid
    b = g.bottom()
    if corner == "T":
        k, dist, th = b[g.iT], g.r_T, g.theta_T
    else:
        k, dist, th = b[0], g.r, g.theta
    rmin = 1.5 * g.h_min
    return shell_fit(dist, field.values - field.values[k], rmin, rmax, nbins=10, min_shells=5,
                     theta=th)


def solve_problem_mr(bvp: MixedBVP, grid: QuadrantGrid, tol_rel: float = 1e-10) -> ScalarField:
    system = assemble(bvp, grid)
    sol = ScalarField(grid, solve_linear(system, tol_rel))
    sol.diagnostics["decay"] = decay_fit(sol)
    sol.diagnostics["corner_T"] = corner_fit(sol, "T")
    return sol
