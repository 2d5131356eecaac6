"""Airfoil profiles, slip-line reconstruction, boundary-data extension and
discrete weighted Hoelder norms."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.spatial import cKDTree

from .elliptic import QuadrantGrid, ScalarField


class GeometryError(ValueError):
    pass


class ConsistencyError(GeometryError):
    """Slip line and profile disagree at the trailing edge."""


def parse_side(side) -> int:
    if side in (1, "+", "plus", "upper"):
        return 1
    if side in (-1, "-", "minus", "lower"):
        return -1
    raise GeometryError(f"unknown side {side!r}")


# ---------------------------------------------------------------- profile

@dataclass(frozen=True)
class Profile:
    """zeta_pm(t) = base(t) +- c_thick * t (1-t)^2 on [0, 1].

    base is the cubic Hermite interpolant with base(0) = base'(0)... only
    the value at 0 is pinned; base(1) = h0 and base'(1) = kstar.
    """

    h0: float
    kstar: float
    c_thick: float = 0.0

    def _parts(self, t, order: int):
        t = np.asarray(t, dtype=float)
        h0, k = self.h0, self.kstar
        if order == 0:
            base = h0 * (3 * t ** 2 - 2 * t ** 3) + k * (t ** 3 - t ** 2)
            thick = t * (1 - t) ** 2
        elif order == 1:
            base = h0 * (6 * t - 6 * t ** 2) + k * (3 * t ** 2 - 2 * t)
            thick = 1 - 4 * t + 3 * t ** 2
        elif order == 2:
            base = h0 * (6 - 12 * t) + k * (6 * t - 2)
            thick = -4 + 6 * t
        else:
            raise GeometryError("profile derivatives available up to order 2")
        return base, thick

    def zeta(self, t, side, order: int = 0):
        base, thick = self._parts(t, order)
        out = base + parse_side(side) * self.c_thick * thick
        return float(out) if np.ndim(out) == 0 else out

    def dzeta(self, t, side):
        return self.zeta(t, side, 1)

    def d2zeta(self, t, side):
        return self.zeta(t, side, 2)

    def to_csv(self, path, n: int = 101) -> None:
        t = np.linspace(0.0, 1.0, n)
        np.savetxt(path, np.column_stack([t, self.zeta(t, 1), self.zeta(t, -1)]), delimiter=",",
                   header="t,zeta_plus,zeta_minus", comments="", fmt="%.17g")


def hermite_profile(h0: float, kstar: float, c_thick: float = 0.0) -> Profile:
    if not c_thick >= 0:
        raise GeometryError(f"c_thick must be nonnegative, got {c_thick}")
    return Profile(float(h0), float(kstar), float(c_thick))


# ---------------------------------------------------------------- slip line

@dataclass(eq=False)
class SlipLine:
    """w = g_T' sampled at nodes t[0] = 1 < t[1] < ... < t[-1] = R.

    w is interpolated by a monotone piecewise cubic and held constant
    beyond R; g_T is the exact running integral of that interpolant.
    """

    epsilon: float
    h0: float
    kstar: float
    t: np.ndarray
    w: np.ndarray
    _pchip: PchipInterpolator = field(init=False, repr=False)
    _anti: PchipInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.t.ndim != 1 or self.t.shape != self.w.shape or self.t.size < 2:
            raise GeometryError("slip line needs matching 1-D node and value arrays")
        if self.t[0] != 1.0 or np.any(np.diff(self.t) <= 0):
            raise GeometryError("slip nodes must start at t=1 and increase strictly")
        if not np.all(np.isfinite(self.w)):
            raise GeometryError("slip line has non-finite values")
        target = self.epsilon * self.kstar
        if abs(self.w[0] - target) > 1e-14 * (1.0 + abs(target)):
            raise ConsistencyError(f"w(1) = {self.w[0]!r} differs from eps*kstar = {target!r}")
        self._pchip = PchipInterpolator(self.t, self.w, extrapolate=False)
        self._anti = self._pchip.antiderivative()

    @property
    def R(self) -> float:
        return float(self.t[-1])

    def w_at(self, s):
        s = np.asarray(s, dtype=float)
        out = self._pchip(np.clip(s, 1.0, self.R))
        return float(out) if out.ndim == 0 else out

    def gT(self, s):
        s = np.asarray(s, dtype=float)
        sc = np.clip(s, 1.0, self.R)
        out = self.epsilon * self.h0 + self._anti(sc) + self.w[-1] * np.maximum(s - self.R, 0.0)
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path, jump=None) -> None:
        cols = [self.t, self.w, self.gT(self.t)]
        header = "t,w,g_T"
        if jump is not None:
            jr = np.concatenate([[0.0], np.asarray(jump, float)]) if len(jump) == len(self.t) - 1 \
                else np.asarray(jump, float)
            cols.append(jr)
            header += ",jump_residual"
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="",
                   fmt="%.17g")


def read_slipline_csv(path):
    """Columns of a slip-line CSV as a dict of arrays."""
    with open(path) as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return {n: data[:, k] for k, n in enumerate(names)}


@dataclass(frozen=True, eq=False)
class BoundaryFn:
    profile: Profile
    slip: SlipLine
    side: int

    @property
    def epsilon(self) -> float:
        return self.slip.epsilon

    def g(self, t):
        t = np.asarray(t, dtype=float)
        eps = self.slip.epsilon
        out = np.where(t <= 1.0, eps * self.profile.zeta(np.clip(t, 0, 1), self.side),
                       self.slip.gT(np.maximum(t, 1.0)))
        return float(out) if out.ndim == 0 else out

    def gprime(self, t):
        t = np.asarray(t, dtype=float)
        eps = self.slip.epsilon
        out = np.where(t <= 1.0, eps * self.profile.dzeta(np.clip(t, 0, 1), self.side),
                       self.slip.w_at(np.maximum(t, 1.0)))
        return float(out) if out.ndim == 0 else out


def boundary_fn(profile: Profile, slip: SlipLine, side) -> BoundaryFn:
    if slip.h0 != profile.h0 or slip.kstar != profile.kstar:
        raise ConsistencyError("slip line and profile carry different (h0, kstar)")
    target = slip.epsilon * profile.kstar
    if abs(slip.w[0] - target) > 1e-14 * (1.0 + abs(target)):
        raise ConsistencyError("w(1) must equal eps*kstar")
    return BoundaryFn(profile, slip, parse_side(side))


# ---------------------------------------------------------------- extension

def kernel(t):
    """(15/16)(1 - t^2)^2 on [-1, 1]."""
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) <= 1.0, 15.0 / 16.0 * (1.0 - t * t) ** 2, 0.0)


def cutoff(s):
    """1 on [-1, 1], 0 outside [-2, 2], quintic smoothstep in between."""
    x = np.clip(np.abs(np.asarray(s, dtype=float)) - 1.0, 0.0, 1.0)
    return 1.0 - x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)
_GL_T = 0.5 * (_GL_X + 1.0)       # nodes on [0, 1]
_GL_W01 = 0.5 * _GL_W


def extension_values(gprime, y1, s2) -> np.ndarray:
    """eta(s2) * [int_0^inf g'(y1 + t s2) K dt + int_-inf^0 g'(y1 - t s2) K dt].

    Both integrals sample g' to the right of y1; with K even they combine
    into 2 int_0^1 g'(y1 + t s2) K(t) dt.
    """
    y1 = np.asarray(y1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    eta = cutoff(s2)
    out = np.zeros(np.broadcast(y1, s2).shape)
    live = eta > 0
    if np.any(live):
        pts = y1[live][:, None] + _GL_T[None, :] * s2[live][:, None]
        vals = np.asarray(gprime(pts.ravel()), dtype=float).reshape(pts.shape)
        out[live] = eta[live] * (2.0 * vals * kernel(_GL_T)[None, :] * _GL_W01[None, :]).sum(axis=1)
    return out


def mollified_extension(gprime, grid: QuadrantGrid) -> ScalarField:
    """Extension of g' into the quadrant, evaluated in stretched coordinates.

    g' is called with t >= 0; callers clamp beyond R (SlipLine does).
    """
    y1, s2 = grid.coords(stretched=True)
    return ScalarField(grid, extension_values(gprime, y1, s2))


# ---------------------------------------------------------------- norms

@dataclass(frozen=True)
class HolderSpec:
    alpha: float
    beta: float
    sigma: float = 0.0
    P: tuple = ()
    n_pairs: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise GeometryError(f"alpha must lie in (0, 1/2), got {self.alpha}")
        if not 0 < self.beta < 1:
            raise GeometryError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class Sampled1D:
    """A function sampled on strictly increasing nodes."""

    t: np.ndarray
    f: np.ndarray


def _derivs_1d(t, f, k):
    out = [np.asarray(f, float)]
    for _ in range(k):
        out.append(np.gradient(out[-1], t, edge_order=2))
    return [[d] for d in out]


def _derivs_2d(field: ScalarField, k):
    ops = field.grid.operators()
    levels = [[field.values]]
    for _ in range(k):
        prev = levels[-1]
        nxt = [ops.D1 @ prev[0]] + [ops.D2 @ p for p in prev]
        levels.append(nxt)
    return levels


def _dist_to(P, X):
    if len(P) == 0:
        return np.ones(len(X))
    P = np.asarray(P, dtype=float).reshape(len(P), -1)
    d = np.min(np.linalg.norm(X[:, None, :] - P[None, :, :], axis=2), axis=1)
    return np.minimum(d, 1.0)


def weighted_norm_terms(f, spec: HolderSpec, k: int, tau: float) -> dict:
    """Components of the discrete weighted norm: sup terms per order and the Hoelder quotient."""
    if k < 0 or k > 2:
        raise GeometryError(f"derivative order {k} not supported (max 2)")
    if isinstance(f, ScalarField):
        X = np.column_stack(f.grid.coords())
        levels = _derivs_2d(f, k)
        h_min = f.grid.h_min / max(f.grid.stretch, 1.0)
    else:
        t = np.asarray(f.t, dtype=float)
        X = t[:, None]
        levels = _derivs_1d(t, f.f, k)
        h_min = float(np.min(np.diff(t)))
    delta = _dist_to(spec.P, X)
    Delta = np.linalg.norm(X, axis=1) + 1.0
    terms = {}
    for i, lev in enumerate(levels):
        mag = np.max(np.abs(np.vstack(lev)), axis=0)
        w = delta ** max(i + spec.sigma, 0.0) * Delta ** (tau + i)
        terms[f"sup{i}"] = float(np.max(w * mag))

    a = spec.alpha
    top = np.vstack(levels[k])
    npts = len(X)
    rng = np.random.default_rng(spec.seed)
    if npts * (npts - 1) // 2 <= spec.n_pairs:
        I, J = np.triu_indices(npts, 1)
    elif X.shape[1] == 1:
        I = rng.integers(0, npts, spec.n_pairs)
        J = rng.integers(0, npts, spec.n_pairs)
    else:
        tree = cKDTree(X)
        I = rng.integers(0, npts, spec.n_pairs)
        nbrs = tree.query_ball_point(X[I], r=1.0)
        J = np.array([nb[rng.integers(0, len(nb))] for nb in nbrs])
    sep = np.linalg.norm(X[I] - X[J], axis=1)
    keep = (sep >= h_min * (1 - 1e-12)) & (sep <= 1.0) & (I != J)
    I, J, sep = I[keep], J[keep], sep[keep]
    if I.size:
        dpair = np.minimum(delta[I], delta[J])
        Dpair = np.minimum(Delta[I], Delta[J])
        diff = np.max(np.abs(top[:, I] - top[:, J]), axis=0)
        w = dpair ** max(k + a + spec.sigma, 0.0) * Dpair ** (tau + k + a)
        terms["holder"] = float(np.max(w * diff / sep ** a))
    else:
        terms["holder"] = 0.0
    terms["pairs"] = int(I.size)
    return terms


def weighted_norm(f, spec: HolderSpec, k: int, tau: float) -> float:
    """Discrete analogue of the weighted norm: sum_i sup-terms + Hoelder term of order k.

    ``f`` is a ScalarField or a Sampled1D.  The Hoelder quotient is taken
    over node pairs with separation in [h_min, 1] (all pairs when few,
    otherwise ``spec.n_pairs`` seeded random pairs).
    """
    terms = weighted_norm_terms(f, spec, k, tau)
    return sum(v for key, v in terms.items() if key.startswith("sup")) + terms["holder"]
