import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slipline import freeboundary as fb


def _pb(n=32, R=8.0, **kw):
    return fb.build_problem(fb.FreeBoundaryConfig(R=R, n_radial=n, **kw))


SYMMETRIC = dict(rho_minus=1.0, q_minus=0.5, h0=0.0, kstar=0.0, c_thick=1.0)


def test_flat_constants():
    c = _pb(16).flat
    assert (c.a_plus, c.b_plus) == (pytest.approx(0.5, rel=1e-12), pytest.approx(0.152174, abs=1e-6))
    assert (c.a_minus, c.b_minus) == (pytest.approx(0.6, rel=1e-12), pytest.approx(0.174043, abs=1e-6))
    assert c.jump_scale == pytest.approx(0.598989, abs=1e-6)


def test_problem_layout():
    pb = _pb(32)
    t = pb.t
    assert t[0] == 1.0 and t[-1] == pb.config.R and np.all(np.diff(t) > 0)
    assert pb.slip_nodes.size == t.size - 1
    w = pb.initial_w(0.01)
    assert w[0] == pytest.approx(0.01 * 0.2, rel=1e-15)
    assert np.allclose(w[t > 1], 0.002 * t[t > 1] ** -0.5)


def test_T_vanishes_at_flat_state():
    pb = _pb(32)
    jump = fb.eval_T(0.0, np.zeros(pb.t.size), pb)
    assert jump.sup <= 1e-14 and jump.values.shape == (pb.t.size - 1,)


def test_symmetric_configuration_has_no_jump():
    pb = _pb(32, **SYMMETRIC)
    jump = fb.eval_T(0.01, pb.initial_w(0.01), pb)
    assert jump.sup <= 1e-14
    res = fb.newton_solve(0.01, pb)
    assert res.converged and res.steps == 0 and res.status == "converged"


def test_reference_jump_is_nonzero_and_scales():
    pb = _pb(32)
    a = fb.eval_T(0.005, pb.initial_w(0.005), pb).sup
    b = fb.eval_T(0.01, pb.initial_w(0.01), pb).sup
    assert a > 1e-4
    assert b / a == pytest.approx(2.0, rel=0.05)


def test_DT_linear_in_direction():
    pb = _pb(32)
    t = pb.t
    d1 = np.where(t > 1, np.exp(-(t - 1)), 0.0)
    d2 = np.where(t > 1, np.sin(t - 1) / t, 0.0)
    z = np.zeros(t.size)
    base = fb.eval_T(0.01, pb.initial_w(0.01), pb).solutions
    p1 = fb.eval_DT(0.01, pb.initial_w(0.01), 0.0, d1, pb, base=base)
    p2 = fb.eval_DT(0.01, pb.initial_w(0.01), 0.0, d2, pb, base=base)
    p12 = fb.eval_DT(0.01, pb.initial_w(0.01), 0.0, 2 * d1 - d2, pb, base=base)
    assert np.allclose(p12, 2 * p1 - p2, atol=1e-10 * np.max(np.abs(p1)))
    assert np.all(fb.eval_DT(0.0, z, 0.0, z, pb) == 0)
    with pytest.raises(ValueError):
        fb.eval_DT(0.0, z, 1.0, z, pb)


@pytest.mark.parametrize("eps", [0.0, 0.01])
def test_DT_matches_central_difference(eps):
    # the derivative is of the discrete map, so it agrees with a central
    # difference of eval_T to O(h^2) in the step
    pb = _pb(32)
    t = pb.t
    w = pb.initial_w(eps)
    d = np.where(t > 1, (t - 1) * np.exp(-(t - 1)), 0.0)
    dT = fb.eval_DT(eps, w, 0.0, d, pb)
    errs = []
    for h in (2e-4, 1e-4):
        fd = (fb.eval_T(eps, w + h * d, pb).values - fb.eval_T(eps, w - h * d, pb).values) / (2 * h)
        errs.append(np.max(np.abs(fd - dT)) / np.max(np.abs(dT)))
    assert errs[1] < 1e-5
    assert errs[1] < 0.3 * errs[0] or errs[1] < 1e-8
    # eps direction through the boundary data
    de = 1e-3
    wd = np.zeros(t.size)
    wd[0] = pb.profile.kstar
    dTe = fb.eval_DT(eps, w, 1.0, wd, pb)
    fd = (fb.eval_T(eps + de, w + de * wd, pb).values
          - fb.eval_T(eps - de, w - de * wd, pb).values) / (2 * de)
    assert np.max(np.abs(fd - dTe)) <= 1e-4 * np.max(np.abs(dTe))


def test_flat_inverse_zero_and_shape():
    pb = _pb(16)
    assert np.all(fb.invert_DT0(np.zeros(pb.slip_nodes.size), pb) == 0)
    with pytest.raises(ValueError):
        fb.invert_DT0(np.zeros(3), pb)
    f = fb.invert_DT0_fields(np.ones(pb.slip_nodes.size), pb)
    assert f.dw[0] == 0.0
    # the first Laplace problem carries the scaled jump as Dirichlet data
    assert np.allclose(f.dv2.values[pb.slip_nodes], 1.0 / pb.flat.jump_scale)


def _roundtrip(n):
    pb = _pb(n, R=16.0)
    t = pb.t
    dw = np.where(t > 1, (t - 1) * np.exp(-(t - 1)), 0.0)
    dp = fb.eval_DT(0.0, np.zeros(t.size), 0.0, dw, pb)
    back = fb.invert_DT0(dp, pb)
    s = t[1:]
    q = np.exp(-(s - 1)) * np.sin(2 * (s - 1))
    e = np.exp(-(s - 1))
    q = q - fb.solvability_pairing(t, q) / fb.solvability_pairing(t, e) * e
    q2 = fb.eval_DT(0.0, np.zeros(t.size), 0.0, fb.invert_DT0(q, pb), pb)
    return (np.max(np.abs(back - dw)) / np.max(np.abs(dw)),
            np.max(np.abs(q2 - q)) / np.max(np.abs(q)),
            abs(fb.solvability_pairing(t, dp)) / np.max(np.abs(dp)))


@pytest.mark.slow
def test_flat_inverse_roundtrips_converge():
    # inverse after forward map, forward after inverse on jumps with zero
    # pairing, and the pairing of images of the forward map all shrink with h
    coarse, fine = _roundtrip(32), _roundtrip(64)
    for c, f in zip(coarse, fine):
        assert f < 0.6 * c
    assert fine[0] < 0.06 and fine[1] < 0.15


def test_solvability_pairing_oracle():
    # f(t) = 1/t^2 on t = cosh(theta): int f dt / sqrt(t^2 - 1) = int sech^2 = tanh
    theta = np.linspace(0.0, 3.0, 4001)
    t = np.cosh(theta)
    f = 1.0 / t[1:] ** 2
    got = fb.solvability_pairing(t, f)
    assert got == pytest.approx(np.tanh(3.0), abs=1e-5)
    assert fb.solvability_pairing(t[1:], f) == got


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_solvability_pairing_linear(a, b):
    t = np.linspace(1.0, 10.0, 50)
    f, g = np.sin(t[1:]), np.exp(-t[1:])
    lhs = fb.solvability_pairing(t, a * f + b * g)
    rhs = a * fb.solvability_pairing(t, f) + b * fb.solvability_pairing(t, g)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_newton_flat_and_trace():
    pb = _pb(16)
    res = fb.newton_solve(0.0, pb)
    assert res.converged and res.steps == 0 and res.jump.sup <= 1e-14
    d = res.trace_dict()
    assert d["status"] == "converged" and d["tol_p"] == pb.config.tol_p


def test_newton_reference_records_trace():
    pb = _pb(32, max_newton=2)
    res = fb.newton_solve(0.01, pb, raise_on_divergence=False)
    assert not res.converged and res.status == "max_steps" and res.steps == 2
    jumps = [r["jump_sup"] for r in res.trace]
    assert jumps[1] < jumps[0]
    assert all("solvability_pairing" in r for r in res.trace)
    assert res.w[0] == pytest.approx(0.01 * pb.profile.kstar, rel=1e-15)


def _growing(monkeypatch, pb):
    calls = {"n": 0}

    def fake_T(eps, w, problem):
        calls["n"] += 1
        return fb.PressureJump(problem.t[1:], np.full(problem.t.size - 1, float(calls["n"])), ())

    monkeypatch.setattr(fb, "eval_T", fake_T)
    monkeypatch.setattr(fb, "invert_DT0", lambda dp, problem: np.zeros(problem.t.size))


def test_newton_divergence(monkeypatch):
    pb = _pb(16)
    _growing(monkeypatch, pb)
    with pytest.raises(fb.NewtonDivergenceError) as exc:
        fb.newton_solve(0.01, pb)
    assert len(exc.value.trace) == 4
    res = fb.newton_solve(0.01, pb, raise_on_divergence=False)
    assert res.status == "diverged" and not res.converged


def test_eps0_probe():
    assert fb.eps0_probe(_pb(16, **SYMMETRIC), [0.01, 0.005, 0.02]) == 0.02
    assert fb.eps0_probe(_pb(16, max_newton=2), [0.005, 0.01]) == 0.0


def test_threads_do_not_change_results():
    a = fb.eval_T(0.01, _pb(32, threads=1).initial_w(0.01), _pb(32, threads=1)).values
    b = fb.eval_T(0.01, _pb(32, threads=2).initial_w(0.01), _pb(32, threads=2)).values
    assert np.array_equal(a, b)
