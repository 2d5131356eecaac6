"""Polytropic gas closure in Euler-Lagrange variables.

The unknowns are v = (v1, v2) = (u2/u1, 1/(rho*u1)).  Given the per-side
invariants A = p/rho**gamma, B (Bernoulli) and the background mass flux,
the state is recovered from v through the subsonic root of the density
relation

    (v1**2 + 1) / (2 v2**2) + gamma/(gamma-1) * A * rho**(gamma+1) = B * rho**2.

All functions broadcast over numpy arrays so that whole nodal fields can be
processed at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class GasError(ValueError):
    """Base class for thermodynamic failures."""


class DomainError(GasError):
    """Non-physical input (non-positive density or pressure, bad gamma)."""


class NoSubsonicRootError(GasError):
    """The kinetic term exceeds the subsonic branch: the state would be sonic or supersonic."""

    def __init__(self, message: str, count: int = 0, index=None):
        super().__init__(message)
        self.count = count
        self.index = index


class SonicStateError(GasError):
    """c**2 == q**2: the flux Jacobian is singular."""


@dataclass(frozen=True)
class GasLaw:
    gamma: float = 1.4

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 1.0:
            raise DomainError(f"gamma must exceed 1, got {self.gamma}")


@dataclass(frozen=True)
class UniformState:
    """Background state (rho0, q0, 0, p0) on one side of the slip line."""

    rho0: float
    q0: float
    p0: float

    def __post_init__(self):
        if not (self.rho0 > 0 and self.p0 > 0):
            raise DomainError(f"background needs rho0 > 0 and p0 > 0, got {self}")
        if not self.q0 > 0:
            raise DomainError(f"background needs q0 > 0, got q0={self.q0}")

    def mach(self, law: GasLaw) -> float:
        return self.q0 / np.sqrt(law.gamma * self.p0 / self.rho0)

    def check_subsonic(self, law: GasLaw) -> None:
        m = self.mach(law)
        if not m < 1.0:
            raise DomainError(f"background is not subsonic (M={m:.6g})")

    def as_flow(self) -> "FlowState":
        return FlowState(self.rho0, self.q0, 0.0, self.p0)


@dataclass(frozen=True)
class FlowState:
    rho: ArrayLike
    u1: ArrayLike
    u2: ArrayLike
    p: ArrayLike


@dataclass(frozen=True)
class HydroInvariants:
    A: float
    B: float
    m1: float


@dataclass(frozen=True)
class VelocityVars:
    v1: ArrayLike
    v2: ArrayLike


@dataclass(frozen=True)
class EllipticCoeffs:
    a11: ArrayLike
    a12: ArrayLike
    a21: ArrayLike
    a22: ArrayLike
    margin: ArrayLike

    def margin_from_entries(self):
        return self.a11 - 0.25 * self.a12 ** 2


def sound_speed_mach(state: FlowState, law: GasLaw):
    """Return (c, M) with c = sqrt(gamma p / rho) and M = |u| / c."""
    rho = np.asarray(state.rho, dtype=float)
    p = np.asarray(state.p, dtype=float)
    if np.any(rho <= 0) or np.any(p <= 0):
        raise DomainError("sound speed needs rho > 0 and p > 0")
    c = np.sqrt(law.gamma * p / rho)
    q = np.hypot(state.u1, state.u2)
    return _scalar(c), _scalar(q / c)


def hydro_invariants(bg: UniformState, law: GasLaw) -> HydroInvariants:
    g = law.gamma
    A = bg.p0 / bg.rho0 ** g
    B = 0.5 * bg.q0 ** 2 + g * bg.p0 / ((g - 1.0) * bg.rho0)
    return HydroInvariants(A=A, B=B, m1=bg.rho0 * bg.q0)


def background_v(bg: UniformState) -> VelocityVars:
    return VelocityVars(0.0, 1.0 / (bg.rho0 * bg.q0))


def density_bracket(inv: HydroInvariants, law: GasLaw):
    """(rho_crit, rho_max) of the subsonic branch."""
    g = law.gamma
    rho_crit = (2.0 * (g - 1.0) * inv.B / (g * (g + 1.0) * inv.A)) ** (1.0 / (g - 1.0))
    rho_max = ((g - 1.0) * inv.B / (g * inv.A)) ** (1.0 / (g - 1.0))
    return rho_crit, rho_max


def _G(rho, inv, g):
    return inv.B * rho ** 2 - g / (g - 1.0) * inv.A * rho ** (g + 1.0)


def _dG(rho, inv, g):
    return 2.0 * inv.B * rho - g * (g + 1.0) / (g - 1.0) * inv.A * rho ** g


def subsonic_density(inv: HydroInvariants, v: VelocityVars, law: GasLaw,
                     bisect_tol: float = 1e-6, newton_tol: float = 1e-13):
    """Density on the subsonic branch for given v.

    G(rho) = B rho^2 - gamma/(gamma-1) A rho^(gamma+1) decreases strictly from
    its maximum at rho_crit to zero at rho_max, so the root of G = kinetic
    term is unique there.  Bisection brackets it to ``bisect_tol`` (relative
    to rho_max) and Newton polishes to ``newton_tol``.
    """
    g = law.gamma
    v1 = np.asarray(v.v1, dtype=float)
    v2 = np.asarray(v.v2, dtype=float)
    if np.any(~(v2 > 0)):
        raise DomainError("v2 must be positive")
    kin = (v1 ** 2 + 1.0) / (2.0 * v2 ** 2)
    kin, _ = np.broadcast_arrays(kin, v1)
    kin = np.array(kin, dtype=float)
    rho_crit, rho_max = density_bracket(inv, law)
    gmax = _G(rho_crit, inv, g)
    bad = ~(kin < gmax)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))
        raise NoSubsonicRootError(
            f"no subsonic density root at {int(bad.sum())} point(s); "
            f"kinetic term {float(np.max(kin)):.6g} >= max G {gmax:.6g}",
            count=int(bad.sum()), index=idx[0] if len(idx) else None)

    lo = np.full(kin.shape, rho_crit)
    hi = np.full(kin.shape, rho_max)
    # G(lo) > kin >= G(hi)
    while np.max(hi - lo) > bisect_tol * rho_max:
        mid = 0.5 * (lo + hi)
        above = _G(mid, inv, g) > kin
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    rho = 0.5 * (lo + hi)
    for _ in range(50):
        step = (_G(rho, inv, g) - kin) / _dG(rho, inv, g)
        rho_new = np.clip(rho - step, lo, hi)
        done = np.max(np.abs(rho_new - rho) / rho) <= newton_tol
        rho = rho_new
        if done:
            break
    return _scalar(rho)


def state_from_v(inv: HydroInvariants, v: VelocityVars, law: GasLaw) -> FlowState:
    rho = np.asarray(subsonic_density(inv, v, law))
    v1 = np.asarray(v.v1, dtype=float)
    v2 = np.asarray(v.v2, dtype=float)
    u1 = 1.0 / (rho * v2)
    u2 = v1 * u1
    p = inv.A * rho ** law.gamma
    return FlowState(_scalar(rho), _scalar(u1), _scalar(u2), _scalar(p))


def flux_N(inv: HydroInvariants, v: VelocityVars, law: GasLaw):
    """(N1, N2) = (u2, p)."""
    s = state_from_v(inv, v, law)
    return s.u2, s.p


def _jacobian_from_state(s: FlowState, law: GasLaw):
    rho, u1, u2, p = (np.asarray(x, dtype=float) for x in (s.rho, s.u1, s.u2, s.p))
    c2 = law.gamma * p / rho
    q2 = u1 ** 2 + u2 ** 2
    den = c2 - q2
    if np.any(den <= 0):
        raise SonicStateError("flux Jacobian is singular at a sonic or supersonic state")
    n11 = u1 * (c2 - u1 ** 2) / den
    n12 = -c2 * rho * u1 * u2 / den
    n22 = c2 * rho ** 2 * q2 * u1 / den
    return n11, n12, n22, c2, q2


def flux_jacobian(inv: HydroInvariants, v: VelocityVars, law: GasLaw) -> np.ndarray:
    """Matrix J[..., i, j] = dN_i / dv_j.  J[..., 0, 1] and J[..., 1, 0] are the same array."""
    s = state_from_v(inv, v, law)
    n11, n12, n22, _, _ = _jacobian_from_state(s, law)
    J = np.empty(np.shape(n11) + (2, 2))
    J[..., 0, 0] = n11
    J[..., 0, 1] = n12
    J[..., 1, 0] = n12
    J[..., 1, 1] = n22
    return J


def coeff_a(inv: HydroInvariants, v: VelocityVars, law: GasLaw) -> EllipticCoeffs:
    s = state_from_v(inv, v, law)
    n11, n12, n22, c2, q2 = _jacobian_from_state(s, law)
    rho, u1 = np.asarray(s.rho), np.asarray(s.u1)
    a11 = n11 / n22
    a12 = 2.0 * n12 / n22
    margin = (c2 - q2) * u1 ** 2 / (c2 * rho ** 2 * q2 ** 2)
    one = np.ones_like(a11)
    return EllipticCoeffs(_scalar(a11), _scalar(a12), _scalar(0.0 * one), _scalar(one),
                          _scalar(margin))


def coeff_a_dv(inv: HydroInvariants, v: VelocityVars, law: GasLaw, h: float = 1e-5):
    """Partial derivatives of (a11, a12) with respect to (v1, v2).

    Central differences in v-space; returns arrays (da11/dv1, da11/dv2,
    da12/dv1, da12/dv2).  The step is relative for v2.
    """
    v1 = np.asarray(v.v1, dtype=float)
    v2 = np.asarray(v.v2, dtype=float)
    h2 = h * np.abs(v2)
    cp = coeff_a(inv, VelocityVars(v1 + h, v2), law)
    cm = coeff_a(inv, VelocityVars(v1 - h, v2), law)
    dp = coeff_a(inv, VelocityVars(v1, v2 + h2), law)
    dm = coeff_a(inv, VelocityVars(v1, v2 - h2), law)
    return ((np.asarray(cp.a11) - cm.a11) / (2 * h), (np.asarray(dp.a11) - dm.a11) / (2 * h2),
            (np.asarray(cp.a12) - cm.a12) / (2 * h), (np.asarray(dp.a12) - dm.a12) / (2 * h2))


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def coeff_a_d2v(inv: HydroInvariants, v: VelocityVars, law: GasLaw, h: float = 1e-4):
    """Second partials of (a11, a12) in v by central differences.

    Returns ((a11_11, a11_12, a11_22), (a12_11, a12_12, a12_22)); the v2
    step is relative to |v2|.
    """
    v1 = np.asarray(v.v1, dtype=float)
    v2 = np.asarray(v.v2, dtype=float)
    h2 = h * np.abs(v2)
    vals = {}
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            c = coeff_a(inv, VelocityVars(v1 + i * h, v2 + j * h2), law)
            vals[i, j] = (np.asarray(c.a11), np.asarray(c.a12))
    out = []
    for k in (0, 1):
        f = {key: val[k] for key, val in vals.items()}
        d11 = (f[1, 0] - 2 * f[0, 0] + f[-1, 0]) / h ** 2
        d22 = (f[0, 1] - 2 * f[0, 0] + f[0, -1]) / h2 ** 2
        d12 = (f[1, 1] - f[1, -1] - f[-1, 1] + f[-1, -1]) / (4 * h * h2)
        out.append((d11, d12, d22))
    return tuple(out)
