import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.interpolate import RegularGridInterpolator

from slipline import elliptic as el


def test_grid_invariants():
    for R, n, g in ((8.0, 16, 1.0), (16.0, 64, 2.0), (12.5, 40, 3.0)):
        grid = el.build_grid(R, n, g)
        assert np.all(np.diff(grid.y1) > 0) and np.all(np.diff(grid.s2) > 0)
        assert grid.y1[0] == 0.0 and grid.y1[grid.iT] == 1.0 and grid.s2[0] == 0.0
        assert grid.h_min > 0
        tags = grid.node_tags
        assert set(np.unique(tags)) <= {el.TAG_INTERIOR, el.TAG_H, el.TAG_L, el.TAG_S}
        assert np.all(grid.r <= R * (1 + 1e-12))
        b = grid.bottom()
        y1, y2 = grid.coords()
        assert np.all(y2[b] == 0) and y1[b][grid.iT] == 1.0


def test_grid_grading_ratio():
    grid = el.build_grid(16.0, 64, 2.0)
    d = np.diff(grid.y1)
    near_T = d[grid.iT - 1: grid.iT + 1].min()
    assert d.max() / near_T >= 10
    flat = el.build_grid(8.0, 16, 1.0)
    assert np.ptp(np.diff(flat.y1)) / np.mean(np.diff(flat.y1)) < 0.3


def test_grid_rejects_bad_parameters():
    with pytest.raises(el.GridError):
        el.build_grid(4.0, 32)
    with pytest.raises(el.GridError):
        el.build_grid(16.0, 8)


def test_zero_data_gives_zero():
    grid = el.build_grid(8.0, 16)
    sol = el.solve_problem_mr(el.MixedBVP.laplace(grid), grid)
    assert np.all(sol.values == 0)
    assert sol.diagnostics["decay"].status == "zero"


def _mms_error(n, u_fn, coeffs, mu2=0.0, R=16.0):
    """Sup error for a manufactured solution; u_fn returns (u, u1, u2, u11, u12, u22)."""
    grid = el.build_grid(R, n)
    y1, y2 = grid.coords()
    u, u1, u2, u11, u12, u22 = u_fn(y1, y2)
    a11, a12, b1, b2 = coeffs(y1, y2)
    f = a11 * u11 + a12 * u12 + u22 + b1 * u1 + b2 * u2
    mu1 = np.ones_like(y1)
    m2 = np.full_like(y1, mu2)
    bvp = el.MixedBVP(a11, a12, b1, b2, f, u, mu1, m2, mu1 * u1 + m2 * u2)
    return float(np.max(np.abs(el.solve_problem_mr(bvp, grid).values - u)))


def _gauss_bump(y1, y2):
    e = np.exp(-(y1 ** 2 + y2 ** 2) / 8)
    u = y1 * y2 * e
    u1 = y2 * e * (1 - y1 ** 2 / 4)
    u2 = y1 * e * (1 - y2 ** 2 / 4)
    u11 = y2 * e * (-y1 / 2 - y1 / 4 * (1 - y1 ** 2 / 4))
    u22 = y1 * e * (-y2 / 2 - y2 / 4 * (1 - y2 ** 2 / 4))
    u12 = e * (1 - y1 ** 2 / 4) * (1 - y2 ** 2 / 4)
    return u, u1, u2, u11, u12, u22


def _identity(y1, y2):
    one = np.ones_like(y1)
    return one, 0 * one, 0 * one, 0 * one


def test_manufactured_laplace_second_order():
    e = [_mms_error(n, _gauss_bump, _identity) for n in (32, 64)]
    assert np.log2(e[0] / e[1]) >= 1.8


def _cubic_affine(a11, a12):
    """Harmonic cubic pulled back through the Cholesky factor of [[a11, a12/2], [a12/2, 1]]."""
    L = np.linalg.cholesky(np.array([[a11, a12 / 2], [a12 / 2, 1.0]]))
    Li = np.linalg.inv(L)
    s = 0.05

    def u_fn(y1, y2):
        z1 = s * (Li[0, 0] * y1 + Li[0, 1] * y2)
        z2 = s * (Li[1, 0] * y1 + Li[1, 1] * y2)
        u = z1 ** 3 - 3 * z1 * z2 ** 2
        U1, U2 = 3 * z1 ** 2 - 3 * z2 ** 2, -6 * z1 * z2
        H = np.array([[6 * z1, -6 * z2], [-6 * z2, -6 * z1]])
        g1 = s * (U1 * Li[0, 0] + U2 * Li[1, 0])
        g2 = s * (U1 * Li[0, 1] + U2 * Li[1, 1])
        hess = [[s * s * sum(Li[a, i] * H[a, b] * Li[b, j] for a in range(2) for b in range(2))
                 for j in range(2)] for i in range(2)]
        return u, g1, g2, hess[0][0], hess[0][1], hess[1][1]
    return u_fn


def test_constant_mixed_coefficient_affine_oracle():
    a11, a12 = 1.05, 0.08
    u_fn = _cubic_affine(a11, a12)
    y = np.linspace(0, 10, 7)
    _, _, _, u11, u12, u22 = u_fn(y, y[::-1])
    assert np.allclose(a11 * u11 + a12 * u12 + u22, 0, atol=1e-14)
    coeffs = lambda y1, y2: (np.full_like(y1, a11), np.full_like(y1, a12), 0 * y1, 0 * y1)
    e = [_mms_error(n, u_fn, coeffs, mu2=0.05) for n in (32, 64)]
    assert e[1] < 1e-3
    assert np.log2(e[0] / e[1]) >= 1.8


def _variable(y1, y2):
    return (1 + 0.05 * np.sin(y1 / 4), 0.05 * np.cos(y2 / 5), 0.02 + 0 * y1, -0.03 + 0 * y1)


def _smooth(y1, y2):
    k1, k2 = 0.3, 0.2
    c, s, e = np.cos(k1 * y1), np.sin(k1 * y1), np.exp(-k2 * y2)
    u = c * e + 0.1 * y1 * y2 / (1 + y1)
    u1 = -k1 * s * e + 0.1 * y2 / (1 + y1) ** 2
    u2 = -k2 * c * e + 0.1 * y1 / (1 + y1)
    u11 = -k1 ** 2 * c * e - 0.2 * y2 / (1 + y1) ** 3
    u22 = k2 ** 2 * c * e
    u12 = k1 * k2 * s * e + 0.1 / (1 + y1) ** 2
    return u, u1, u2, u11, u12, u22


@pytest.mark.slow
def test_variable_coefficient_mixed_convergence():
    e = [_mms_error(n, _smooth, _variable, mu2=0.05) for n in (32, 64, 128)]
    orders = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(orders >= 1.8), orders


def test_ellipticity_error_names_node():
    grid = el.build_grid(8.0, 16)
    bvp = el.MixedBVP.laplace(grid, tau=None)
    k = int(np.flatnonzero(grid.node_tags == el.TAG_INTERIOR)[5])
    bvp.a11[k] = -1.0
    with pytest.raises(el.EllipticityError) as exc:
        el.assemble(bvp, grid)
    assert exc.value.node == k and f"node {k}" in str(exc.value)


def test_smallness_budget():
    grid = el.build_grid(8.0, 16)
    bvp = el.MixedBVP.laplace(grid)
    bvp.a12[:] = 0.2
    with pytest.raises(el.SmallnessError):
        el.assemble(bvp, grid)
    bvp.mu2[:] = 0.0
    bvp.a12[:] = 0.05
    el.assemble(bvp, grid)


def test_obliqueness_required():
    grid = el.build_grid(8.0, 16)
    bvp = el.MixedBVP.laplace(grid, tau=None)
    bvp.mu1[:] = -1.0
    with pytest.raises(el.EllipticityError):
        el.assemble(bvp, grid)


def test_identity_system():
    b = np.arange(1.0, 6.0)
    x = el.solve_linear(el.LinearSystem(sp.identity(5, format="csr"), b))
    assert np.allclose(x, b, rtol=0, atol=1e-14)


def _bump_problem(R, n):
    grid = el.build_grid(R, n)
    y1, y2 = grid.coords()
    b = grid.node_tags == el.TAG_L
    data = np.where(b & (np.abs(y1 - 2) < 1), (1 - (y1 - 2) ** 2) ** 4, 0.0)
    return grid, el.MixedBVP.laplace(grid, dirichlet=data)


def test_solver_tolerance_consistency():
    grid, bvp = _bump_problem(16.0, 32)
    system = el.assemble(bvp, grid)
    x1 = el.solve_linear(system, 1e-6)
    x2 = el.solve_linear(system, 1e-12)
    r = np.linalg.norm(system.rhs - system.A @ x2) / np.linalg.norm(system.rhs)
    assert r <= 1e-12
    assert np.max(np.abs(x1 - x2)) <= 1e-5


def test_solver_error_carries_residual():
    grid, bvp = _bump_problem(16.0, 32)
    system = el.assemble(bvp, grid)
    with pytest.raises(el.SolverError) as exc:
        el.solve_linear(system, 1e-20, maxiter=2)
    assert 1e-20 < exc.value.residual < 1e-10


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_discrete_maximum_principle(seed):
    grid = el.build_grid(8.0, 16)
    rng = np.random.default_rng(seed)
    interior = grid.node_tags == el.TAG_INTERIOR
    data = np.where(interior, 0.0, rng.uniform(-1, 1, grid.n_nodes))
    bvp = el.MixedBVP.laplace(grid, dirichlet=data, oblique=np.zeros(grid.n_nodes, bool))
    u = el.solve_problem_mr(bvp, grid, tol_rel=1e-13).values
    lo, hi = data[~interior].min(), data[~interior].max()
    assert np.all(u[interior] >= lo - 1e-12) and np.all(u[interior] <= hi + 1e-12)


def test_entrance_data_gives_nonzero_solution():
    grid = el.build_grid(8.0, 16)
    _, y2 = grid.coords()
    g1 = np.where(grid.node_tags == el.TAG_H, np.exp(-y2), 0.0)
    u = el.solve_problem_mr(el.MixedBVP.laplace(grid, g1=g1), grid).values
    assert np.max(np.abs(u)) > 1e-3
    # Dirichlet data vanish, so |u| is controlled by the entrance flux scale
    assert np.max(np.abs(u)) <= grid.R * np.max(np.abs(g1))


def test_bump_decay_and_corner_fits():
    for R, n in ((16.0, 64), (32.0, 128)):
        grid, bvp = _bump_problem(R, n)
        sol = el.solve_problem_mr(bvp, grid)
        d = sol.diagnostics["decay"]
        assert d.status == "ok" and d.slope <= -0.5 + 0.1
        c = sol.diagnostics["corner_T"]
        assert c.status == "ok" and c.slope >= 0.3 - 0.1


def test_truncation_stability():
    sols = {}
    for R, n in ((16.0, 64), (32.0, 128)):
        grid, bvp = _bump_problem(R, n)
        sols[R] = (grid, el.solve_problem_mr(bvp, grid))
    g16, s16 = sols[16.0]
    g32, s32 = sols[32.0]
    i, j = np.searchsorted(g32.y1, 12.0), np.searchsorted(g32.y2, 12.0)
    interp = RegularGridInterpolator((g32.y1[:i], g32.y2[:j]), s32.to_2d()[:i, :j], method="cubic")
    y1, y2 = g16.coords()
    inner = np.hypot(y1, y2) <= 8.0
    diff = np.max(np.abs(interp(np.column_stack([y1[inner], y2[inner]])) - s16.values[inner]))
    assert diff <= 0.2 * np.max(np.abs(s16.values)) * 16 ** -0.5


def test_coo_dump(tmp_path):
    grid = el.build_grid(8.0, 16)
    system = el.assemble(el.MixedBVP.laplace(grid), grid)
    system.to_coo_text(tmp_path / "A.txt")
    lines = (tmp_path / "A.txt").read_text().splitlines()
    n, m, nnz = map(int, lines[0][1:].split())
    assert n == m == grid.n_nodes and nnz == system.A.nnz
    assert len(lines) == 1 + nnz + 1 + n
