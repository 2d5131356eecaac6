"""Log-log power-law fits shared by the elliptic diagnostics and verify."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

R2_MIN = 0.9


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float
    n_points: int
    status: str  # "ok", "inconclusive", "unavailable", "zero"

    @property
    def binding(self) -> bool:
        return self.status == "ok"

    def to_dict(self):
        d = asdict(self)
        for k in ("slope", "intercept", "r2"):
            if not np.isfinite(d[k]):
                d[k] = None
        return d


def unavailable(n: int = 0, status: str = "unavailable") -> FitResult:
    return FitResult(float("nan"), float("nan"), float("nan"), n, status)


def linear_fit(x, y) -> FitResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        return unavailable(x.size)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    status = "ok" if r2 >= R2_MIN else "inconclusive"
    return FitResult(float(coef[0]), float(coef[1]), float(r2), int(x.size), status)


def shell_fit(r, mag, rmin: float, rmax: float, nbins: int = 12, min_shells: int = 8,
              reduce: str = "mean", zero_tol: float = 1e-300, theta=None,
              n_sectors: int = 8) -> FitResult:
    """Fit log(shell-reduced |f|) against log(shell-mean r) on [rmin, rmax].

    Shells are log-spaced bins; empty bins are dropped and fewer than
    ``min_shells`` populated bins gives an "unavailable" result.  With
    ``theta`` the mean is taken over ``n_sectors`` equal angular sectors
    first, so that uneven angular sampling of a shell does not bias it.
    """
    r = np.asarray(r, dtype=float)
    mag = np.abs(np.asarray(mag, dtype=float))
    sel = (r >= rmin) & (r <= rmax)
    if not np.any(sel):
        return unavailable(0)
    if np.max(mag[sel]) <= zero_tol:
        return unavailable(int(sel.sum()), status="zero")
    edges = np.geomspace(rmin, rmax, nbins + 1)
    which = np.digitize(r[sel], edges) - 1
    which = np.clip(which, 0, nbins - 1)
    xs, ys = [], []
    for b in range(nbins):
        m = which == b
        if not np.any(m):
            continue
        vals = mag[sel][m]
        if reduce != "mean":
            val = vals.max()
        elif theta is None:
            val = vals.mean()
        else:
            sec = _sector_index(np.asarray(theta, float)[sel][m], n_sectors)
            val = np.mean([vals[sec == k].mean() for k in np.unique(sec)])
        if val <= zero_tol:
            continue
        xs.append(np.log(r[sel][m].mean()))
        ys.append(np.log(val))
    if len(xs) < min_shells:
        return unavailable(len(xs))
    return linear_fit(xs, ys)


def _sector_index(theta: np.ndarray, n: int) -> np.ndarray:
    lo, hi = theta.min(), theta.max()
    if hi <= lo:
        return np.zeros(theta.shape, dtype=int)
    return np.minimum(((theta - lo) / (hi - lo) * n).astype(int), n - 1)


def curve_fit_loglog(t, mag, tmin: float, tmax: float, min_points: int = 5) -> FitResult:
    """Pointwise log-log fit of a sampled 1-D magnitude on [tmin, tmax]."""
    t = np.asarray(t, dtype=float)
    mag = np.abs(np.asarray(mag, dtype=float))
    sel = (t >= tmin) & (t <= tmax) & (mag > 0)
    if np.count_nonzero((t >= tmin) & (t <= tmax)) and not np.any(sel):
        return unavailable(0, status="zero")
    if np.count_nonzero(sel) < min_points:
        return unavailable(int(np.count_nonzero(sel)))
    return linear_fit(np.log(t[sel]), np.log(mag[sel]))
