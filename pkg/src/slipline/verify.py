"""Independent checks on computed flows.

Everything here works from physical-coordinate data (node positions and
rho, u, p), differentiated with numpy.gradient on the mapped mesh, so the
residuals do not reuse the solver's stencils.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._fitting import FitResult, curve_fit_loglog, shell_fit, unavailable
from .elliptic import TAG_INTERIOR, QuadrantGrid
from .geometry import HolderSpec, Sampled1D, SlipLine, weighted_norm
from .nonlinear import PhysicalField

log = logging.getLogger(__name__)

CORNER_EXCLUSION = 0.1


def _bottom(ph: PhysicalField) -> np.ndarray:
    return ph.grid.bottom()


def _corner_mask(x1, x2, T_height: float, radius: float) -> np.ndarray:
    """True away from the disks around O = (0, 0) and T = (1, T_height)."""
    return (np.hypot(x1, x2) >= radius) & (np.hypot(x1 - 1.0, x2 - T_height) >= radius)


@dataclass
class RHResult:
    pressure_sup: float
    normal_velocity_sup: float
    normal_velocity_by_side: dict

    def to_dict(self):
        return {"pressure_sup": self.pressure_sup, "normal_velocity_sup": self.normal_velocity_sup,
                "normal_velocity_by_side": self.normal_velocity_by_side}


def normal_velocity(ph: PhysicalField, radius: float = CORNER_EXCLUSION) -> np.ndarray:
    """u.n on the bottom boundary (airfoil and slip line) from node positions.

    The normal is that of the polyline through the boundary nodes,
    differentiated with second-order nonuniform differences; nodes within
    ``radius`` of O or T are dropped.
    """
    b = _bottom(ph)
    x1, x2 = ph.x1[b], ph.x2[b]
    slope = np.gradient(x2, x1, edge_order=2)
    u1 = np.asarray(ph.state.u1)[b]
    u2 = np.asarray(ph.state.u2)[b]
    un = (u2 - u1 * slope) / np.sqrt(1.0 + slope ** 2)
    iT = ph.grid.iT
    keep = _corner_mask(x1, x2, x2[iT], radius)
    return un[keep]


def pressure_jump(ph_plus: PhysicalField, ph_minus: PhysicalField) -> np.ndarray:
    """p+ - p- at the shared bottom nodes with y1 > 1."""
    k = ph_plus.grid.slip_nodes()
    return np.asarray(ph_plus.state.p)[k] - np.asarray(ph_minus.state.p)[k]


def rh_check(ph_plus: PhysicalField, ph_minus: PhysicalField,
             radius: float = CORNER_EXCLUSION) -> RHResult:
    jump = pressure_jump(ph_plus, ph_minus)
    by_side = {}
    for ph in (ph_plus, ph_minus):
        un = normal_velocity(ph, radius)
        by_side["plus" if ph.side > 0 else "minus"] = float(np.max(np.abs(un))) if un.size else 0.0
    return RHResult(float(np.max(np.abs(jump))) if jump.size else 0.0, max(by_side.values()), by_side)


# ---------------------------------------------------------------- Euler

def _mapped_gradients(ph: PhysicalField, F: np.ndarray):
    """(dF/dx1, dF/dx2) at nodes, chain rule through x1 = y1, x2 = x2(y1, y2)."""
    g = ph.grid
    y1 = g.y1
    y2 = g.y2 * ph.side
    X2 = g.to_2d(ph.x2)
    F2 = g.to_2d(F)
    with np.errstate(invalid="ignore"):
        F_1 = np.gradient(F2, y1, axis=0, edge_order=2)
        F_2 = np.gradient(F2, y2, axis=1, edge_order=2)
        X_1 = np.gradient(X2, y1, axis=0, edge_order=2)
        X_2 = np.gradient(X2, y2, axis=1, edge_order=2)
        dx1 = F_1 - F_2 * X_1 / X_2
        dx2 = F_2 / X_2
    ii, jj = g.ij
    return dx1[ii, jj], dx2[ii, jj]


def euler_fluxes(ph: PhysicalField, gamma: float) -> dict:
    s = ph.state
    rho, u1, u2, p = (np.asarray(a, float) for a in (s.rho, s.u1, s.u2, s.p))
    H = 0.5 * (u1 ** 2 + u2 ** 2) + gamma * p / ((gamma - 1.0) * rho)
    return {"mass": (rho * u1, rho * u2),
            "momentum1": (rho * u1 * u1 + p, rho * u1 * u2),
            "momentum2": (rho * u1 * u2, rho * u2 * u2 + p),
            "energy": (rho * u1 * H, rho * u2 * H)}


def euler_residual_fields(ph: PhysicalField, gamma: float, radius: float = CORNER_EXCLUSION):
    """Nodal divergence of each flux on interior nodes away from O and T."""
    keep = ph.grid.node_tags == TAG_INTERIOR
    keep &= _corner_mask(ph.x1, ph.x2, ph.x2[ph.grid.bottom()[ph.grid.iT]], radius)
    out = {}
    for name, (f1, f2) in euler_fluxes(ph, gamma).items():
        d1, _ = _mapped_gradients(ph, f1)
        _, d2 = _mapped_gradients(ph, f2)
        div = d1 + d2
        keep &= np.isfinite(div)
        out[name] = div
    return {k: v[keep] for k, v in out.items()}, keep


def euler_residual(ph: PhysicalField, gamma: float, B0: float,
                   radius: float = CORNER_EXCLUSION) -> dict:
    """Sup norms of div(flux) for mass, both momenta and energy.

    ``identity`` is sup |div(energy flux) - B0 div(mass flux)|, which
    vanishes up to rounding whenever the Bernoulli quantity is the constant
    B0 at every node.
    """
    res, keep = euler_residual_fields(ph, gamma, radius)
    out = {k: float(np.max(np.abs(v))) if v.size else 0.0 for k, v in res.items()}
    ident = res["energy"] - B0 * res["mass"]
    out["identity"] = float(np.max(np.abs(ident))) if ident.size else 0.0
    out["nodes"] = int(np.count_nonzero(keep))
    return out


# ---------------------------------------------------------------- fits

@dataclass
class ExponentFits:
    beta_fit: FitResult
    alpha_fit_O: FitResult
    alpha_fit_T: FitResult
    growth_fit: FitResult
    w_decay_fit: FitResult = field(default_factory=unavailable)

    def to_dict(self):
        return {k: getattr(self, k).to_dict() for k in
                ("beta_fit", "alpha_fit_O", "alpha_fit_T", "growth_fit", "w_decay_fit")}


def field_fits(grid: QuadrantGrid, dev: np.ndarray) -> tuple[FitResult, FitResult, FitResult]:
    """Far-field decay on [R/4, R/2] and corner moduli at O and T of a nodal deviation field.

    ``dev`` has one column per component; magnitudes are Euclidean norms.
    Distances are in stretched coordinates.
    """
    dev = np.atleast_2d(np.asarray(dev, float).T).T
    mag = np.linalg.norm(dev, axis=1)
    decay = shell_fit(grid.r, mag, grid.R / 4, grid.R / 2, theta=grid.theta)
    b = grid.bottom()
    fits = []
    for k, dist, th in ((b[0], grid.r, grid.theta), (b[grid.iT], grid.r_T, grid.theta_T)):
        osc = np.linalg.norm(dev - dev[k], axis=1)
        fits.append(shell_fit(dist, osc, 1.5 * grid.h_min, 0.5, nbins=10, min_shells=5, theta=th))
    return decay, fits[0], fits[1]


def slip_fits(slip: SlipLine) -> tuple[FitResult, FitResult]:
    """(growth of g_T - eps h0 on [2, R], decay of w on [2, R])."""
    t = slip.t
    growth = curve_fit_loglog(t, slip.gT(t) - slip.epsilon * slip.h0, 2.0, slip.R)
    decay = curve_fit_loglog(t, slip.w, 2.0, slip.R)
    return growth, decay


def exponent_fits(ph: PhysicalField, v1: np.ndarray, v2: np.ndarray, v20: float,
                  slip: SlipLine | None = None) -> ExponentFits:
    decay, aO, aT = field_fits(ph.grid, np.column_stack([v1, v2 - v20]))
    if slip is None:
        growth, wdec = unavailable(), unavailable()
    else:
        growth, wdec = slip_fits(slip)
    return ExponentFits(decay, aO, aT, growth, wdec)


# ---------------------------------------------------------------- stability

def unit_normals(slip: SlipLine, t: np.ndarray) -> np.ndarray:
    w = slip.w_at(t)
    nrm = np.sqrt(1.0 + w * w)
    return np.column_stack([-w / nrm, 1.0 / nrm])


@dataclass
class StabilityResult:
    ratios: dict
    stability_constant: float
    ratio_spread: float
    normals_sup: dict
    normals_fit: dict

    def to_dict(self):
        return {"ratios": self.ratios, "stability_constant": self.stability_constant,
                "ratio_spread": self.ratio_spread, "normals_sup": self.normals_sup,
                "normals_fit": {k: v.to_dict() for k, v in self.normals_fit.items()}}


def stability_sweep(slips: list[SlipLine], alpha: float, beta: float, seed: int = 0,
                    n_pairs: int = 10_000) -> StabilityResult:
    """Pairwise weighted norms of g_T - g~_T over |eps - eps~|.

    The norm has k = 1, tau = beta - 1, sigma = -alpha - 1 and P = {1}.
    Also reports sup |n - n~| of the unit normals and the decay slope of
    |n - n~| along t.
    """
    spec = HolderSpec(alpha, beta, sigma=-alpha - 1.0, P=(1.0,), n_pairs=n_pairs, seed=seed)
    t = slips[0].t
    ratios, nsup, nfit = {}, {}, {}
    for a, b in itertools.combinations(slips, 2):
        if not np.array_equal(a.t, b.t):
            raise ValueError("slip lines must share nodes")
        de = abs(a.epsilon - b.epsilon)
        key = f"{a.epsilon:g}|{b.epsilon:g}"
        if de == 0:
            continue
        diff = Sampled1D(t, a.gT(t) - b.gT(t))
        ratios[key] = weighted_norm(diff, spec, k=1, tau=beta - 1.0) / de
        dn = np.linalg.norm(unit_normals(a, t) - unit_normals(b, t), axis=1)
        nsup[key] = float(np.max(dn))
        nfit[key] = curve_fit_loglog(t, dn, 2.0, t[-1])
    vals = np.array(list(ratios.values())) if ratios else np.array([np.nan])
    spread = float(vals.max() / vals.min() - 1.0) if ratios and vals.min() > 0 else float("nan")
    return StabilityResult(ratios, float(np.nanmax(vals)), spread, nsup, nfit)


# ---------------------------------------------------------------- report

@dataclass
class VerificationReport:
    rh_pressure_residual: float
    normal_velocity_residual: float
    slip_residual: float
    euler_residuals: dict
    fits: dict
    tol_p: float
    alpha: float
    beta: float
    newton: dict = field(default_factory=dict)
    epsilon_linearity_ratios: dict = field(default_factory=dict)
    stability_constant: float | None = None

    def checks(self) -> list[tuple[str, str, float | None]]:
        """(name, status, value) with status pass / fail / inconclusive / n/a."""
        out = [("rh_pressure", "pass" if self.rh_pressure_residual <= self.tol_p else "fail",
                self.rh_pressure_residual),
               ("slip_condition", "pass" if self.slip_residual <= 1e-8 else "fail", self.slip_residual)]
        ident = max(r["identity"] for r in self.euler_residuals.values())
        out.append(("energy_mass_identity", "pass" if ident <= 1e-10 else "fail", ident))

        def bound(name, fit: dict, ok):
            if fit["status"] != "ok":
                out.append((name, "inconclusive" if fit["status"] == "inconclusive" else "n/a",
                            fit["slope"]))
            else:
                out.append((name, "pass" if ok(fit["slope"]) else "fail", fit["slope"]))

        for side, f in self.fits.items():
            if side == "slip":
                bound("growth_exponent", f["growth_fit"], lambda s: s <= 1 - self.beta + 0.1)
                bound("w_decay_exponent", f["w_decay_fit"], lambda s: s <= -self.beta + 0.1)
                continue
            bound(f"decay_exponent_{side}", f["beta_fit"], lambda s: s <= -self.beta + 0.1)
            bound(f"holder_T_{side}", f["alpha_fit_T"], lambda s: s >= self.alpha - 0.1)
        return out

    @property
    def passed(self) -> bool:
        return all(status != "fail" for _, status, _ in self.checks())

    def to_dict(self) -> dict:
        return {"rh_pressure_residual": self.rh_pressure_residual,
                "normal_velocity_residual": self.normal_velocity_residual,
                "slip_residual": self.slip_residual, "euler_residuals": self.euler_residuals,
                "fits": self.fits, "tol_p": self.tol_p, "alpha": self.alpha, "beta": self.beta,
                "newton": self.newton, "epsilon_linearity_ratios": self.epsilon_linearity_ratios,
                "stability_constant": self.stability_constant,
                "checks": [{"name": n, "status": s, "value": v} for n, s, v in self.checks()],
                "passed": self.passed}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = [f"{n:28s} {s:12s} {'' if v is None else f'{v:.6g}'}" for n, s, v in self.checks()]
        lines.append(f"{'overall':28s} {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def build_report(phys: tuple[PhysicalField, PhysicalField], v_fields: dict, slip: SlipLine | None,
                 gprime: dict, gamma: float, B0: dict, v20: dict, tol_p: float, alpha: float,
                 beta: float, newton: dict | None = None) -> VerificationReport:
    """Assemble the report from physical fields and the Lagrangian v.

    ``v_fields[side] = (v1, v2)`` in physical orientation, ``gprime[side]``
    the boundary slope evaluator, ``B0[side]`` and ``v20[side]`` the
    background constants; sides are "plus" and "minus".
    """
    ph_p, ph_m = phys
    rh = rh_check(ph_p, ph_m)
    slip_res = 0.0
    euler, fits = {}, {}
    for name, ph in (("plus", ph_p), ("minus", ph_m)):
        b = ph.grid.bottom()
        v1, v2 = v_fields[name]
        slip_res = max(slip_res, float(np.max(np.abs(v1[b] - gprime[name](ph.y1[b])))))
        euler[name] = euler_residual(ph, gamma, B0[name])
        # v1 sign as seen from the solver orientation does not change magnitudes
        fits[name] = exponent_fits(ph, v1, v2, v20[name]).to_dict()
    if slip is not None:
        growth, wdec = slip_fits(slip)
        fits["slip"] = {"growth_fit": growth.to_dict(), "w_decay_fit": wdec.to_dict()}
    return VerificationReport(rh.pressure_sup, rh.normal_velocity_sup, slip_res, euler, fits,
                              tol_p, alpha, beta, newton or {})
