"""Command line front end: ``slipline solve | sweep | verify``.

Runs are described by a JSON config (schema_version 1).  Every output
file is a deterministic function of the config: timings go to the log,
never to disk.
"""
from __future__ import annotations

import json
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import click
import numpy as np

from . import gas, verify
from .elliptic import GridError
from .freeboundary import (FreeBoundaryConfig, NewtonResult, Problem, build_problem,
                           newton_solve)
from .geometry import GeometryError, boundary_fn, read_slipline_csv
from .nonlinear import QuadrantError, PhysicalField, to_physical, write_fields_csv

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 1, 2
FIELD_COLUMNS = ("side", "y1", "y2", "x1", "x2", "v1", "v2", "rho", "u1", "u2", "p")
RUN_FILES = ("config.json", "fields.csv", "slipline.csv", "newton_trace.json")


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class RunError(RuntimeError):
    pass


# ---------------------------------------------------------------- config

_NUMERICS = {"R": "R", "n_radial": "n_radial", "grading": "grading", "alpha": "alpha",
             "beta": "beta", "seed": "seed", "picard_tol": "picard_tol",
             "picard_max_iter": "picard_max_iter", "relax": "relax", "tau": "tau",
             "tol_p": "tol_p", "max_newton": "max_newton", "krylov": "krylov",
             "threads": "threads"}
_SECTIONS = {"schema_version", "name", "gas", "background", "profile", "epsilon", "epsilons",
             "numerics", "output"}


@dataclass(frozen=True)
class RunConfig:
    solver: FreeBoundaryConfig
    epsilon: float | None = None
    epsilons: tuple = ()
    out_dir: str | None = None
    name: str = "run"

    def to_dict(self) -> dict:
        """Canonical JSON form; parse_config(to_dict()) reproduces the config."""
        s = self.solver
        d = {"schema_version": SCHEMA_VERSION, "name": self.name,
             "gas": {"gamma": s.gamma},
             "background": {"plus": {"rho": s.rho_plus, "q": s.q_plus},
                            "minus": {"rho": s.rho_minus, "q": s.q_minus}, "p0": s.p0},
             "profile": {"h0": s.h0, "kstar": s.kstar, "c_thick": s.c_thick},
             "numerics": {k: getattr(s, v) for k, v in _NUMERICS.items()}}
        if self.epsilon is not None:
            d["epsilon"] = self.epsilon
        if self.epsilons:
            d["epsilons"] = list(self.epsilons)
        if self.out_dir is not None:
            d["output"] = {"dir": self.out_dir}
        return d


def _number(raw, name, integer=False):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(name, f"expected a number, got {raw!r}")
    if not math.isfinite(raw):
        raise ConfigError(name, "must be finite")
    if integer:
        if int(raw) != raw:
            raise ConfigError(name, f"expected an integer, got {raw!r}")
        return int(raw)
    return float(raw)


def _section(raw: dict, key: str, allowed: set) -> dict:
    sec = raw.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(key, "expected an object")
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"{key}.{sorted(extra)[0]}", "unknown key")
    return sec


def parse_config(raw: dict) -> RunConfig:
    """Validate a config mapping; raises ConfigError naming the first bad entry."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "expected a JSON object")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    extra = set(raw) - _SECTIONS
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown key")
    defaults = FreeBoundaryConfig()
    kw = {}

    g = _section(raw, "gas", {"gamma"})
    if "gamma" in g:
        kw["gamma"] = _number(g["gamma"], "gas.gamma")
    if not kw.get("gamma", defaults.gamma) > 1:
        raise ConfigError("gas.gamma", "must exceed 1")

    bg = _section(raw, "background", {"plus", "minus", "p0"})
    for side in ("plus", "minus"):
        sec = bg.get(side, {})
        if not isinstance(sec, dict) or set(sec) - {"rho", "q"}:
            raise ConfigError(f"background.{side}", "expected an object with keys rho, q")
        for k in ("rho", "q"):
            if k in sec:
                kw[f"{k}_{side}"] = _number(sec[k], f"background.{side}.{k}")
    if "p0" in bg:
        kw["p0"] = _number(bg["p0"], "background.p0")

    pr = _section(raw, "profile", {"h0", "kstar", "c_thick"})
    for k in ("h0", "kstar", "c_thick"):
        if k in pr:
            kw[k] = _number(pr[k], f"profile.{k}")

    nu = _section(raw, "numerics", set(_NUMERICS))
    ints = {"n_radial", "seed", "picard_max_iter", "max_newton", "threads"}
    for k, attr in _NUMERICS.items():
        if k not in nu:
            continue
        if k == "krylov":
            if not isinstance(nu[k], bool):
                raise ConfigError("numerics.krylov", "expected true or false")
            kw[attr] = nu[k]
        elif k == "tau" and nu[k] is None:
            kw[attr] = None
        else:
            kw[attr] = _number(nu[k], f"numerics.{k}", integer=k in ints)

    cfg = replace(defaults, **kw)
    _check_solver(cfg)

    eps = None
    if "epsilon" in raw:
        eps = _number(raw["epsilon"], "epsilon")
    epsilons = ()
    if "epsilons" in raw:
        if not isinstance(raw["epsilons"], list):
            raise ConfigError("epsilons", "expected a list")
        epsilons = tuple(_number(e, f"epsilons[{i}]") for i, e in enumerate(raw["epsilons"]))
        if len(set(epsilons)) != len(epsilons):
            raise ConfigError("epsilons", "entries must be distinct")
    out = _section(raw, "output", {"dir"}).get("dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output.dir", "expected a string")
    name = raw.get("name", "run")
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "expected a non-empty string")
    return RunConfig(cfg, eps, epsilons, out, name)


def _check_solver(cfg: FreeBoundaryConfig) -> None:
    law = gas.GasLaw(cfg.gamma)
    for side in ("plus", "minus"):
        rho, q = getattr(cfg, f"rho_{side}"), getattr(cfg, f"q_{side}")
        name = f"background.{side}"
        if not (rho > 0 and q > 0 and cfg.p0 > 0):
            raise ConfigError(name, "rho, q and p0 must be positive")
        m = gas.UniformState(rho, q, cfg.p0).mach(law)
        if not m < 1:
            raise ConfigError(name, f"background is not subsonic (M={m:.6g})")
    checks = [
        ("numerics.alpha", 0 < cfg.alpha < 0.5, "must lie in (0, 1/2)"),
        ("numerics.beta", 0 < cfg.beta < 1, "must lie in (0, 1)"),
        ("numerics.R", cfg.R > 4, "must exceed 4"),
        ("numerics.n_radial", cfg.n_radial >= 16, "must be at least 16"),
        ("numerics.grading", cfg.grading >= 1, "must be at least 1"),
        ("numerics.picard_tol", cfg.picard_tol > 0, "must be positive"),
        ("numerics.picard_max_iter", cfg.picard_max_iter >= 1, "must be at least 1"),
        ("numerics.relax", 0.5 <= cfg.relax <= 1, "must lie in [0.5, 1]"),
        ("numerics.tau", cfg.tau is None or 0 < cfg.tau < 1, "must lie in (0, 1) or be null"),
        ("numerics.tol_p", cfg.tol_p > 0, "must be positive"),
        ("numerics.max_newton", cfg.max_newton >= 0, "must be non-negative"),
        ("numerics.threads", cfg.threads >= 1, "must be at least 1"),
        ("numerics.seed", cfg.seed >= 0, "must be non-negative"),
        ("profile.c_thick", cfg.c_thick >= 0, "must be non-negative"),
    ]
    for name, ok, msg in checks:
        if not ok:
            raise ConfigError(name, msg)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from None
    return parse_config(raw)


# ---------------------------------------------------------------- outputs

def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_json_safe(_strip_timing(obj)), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_run(out: Path, rc: RunConfig, eps: float, res: NewtonResult, problem: Problem) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", {**rc.to_dict(), "epsilon": eps})
    physicals = [to_physical(s, boundary_fn(problem.profile, res.slip, s.side)) for s in res.solutions]
    write_fields_csv(out / "fields.csv", res.solutions, physicals)
    res.slip.to_csv(out / "slipline.csv", jump=res.jump.values)
    trace = res.trace_dict()
    trace["picard"] = [s.trace_dict() for s in res.solutions]
    write_json(out / "newton_trace.json", trace)


@dataclass
class StoredRun:
    config: RunConfig
    epsilon: float
    problem: Problem
    slip: object
    physicals: tuple
    v: dict
    newton: dict


def read_run(run_dir) -> StoredRun:
    """Load a run directory; raises RunError if artifacts are missing or inconsistent."""
    run = Path(run_dir)
    missing = [f for f in RUN_FILES if not (run / f).is_file()]
    if missing:
        raise RunError(f"{run}: missing {', '.join(missing)}")
    rc = load_config(run / "config.json")
    if rc.epsilon is None:
        raise RunError(f"{run}/config.json has no epsilon")
    problem = build_problem(rc.solver)
    sl = read_slipline_csv(run / "slipline.csv")
    try:
        slip = problem.slip_line(rc.epsilon, sl["w"])
    except (GeometryError, ValueError) as exc:
        raise RunError(f"{run}/slipline.csv: {exc}") from None
    if not np.array_equal(slip.t, sl["t"]):
        raise RunError(f"{run}/slipline.csv nodes do not match the grid")
    with open(run / "fields.csv") as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != FIELD_COLUMNS:
        raise RunError(f"{run}/fields.csv: unexpected columns {header}")
    data = np.loadtxt(run / "fields.csv", delimiter=",", skiprows=1, ndmin=2)
    physicals, v = [], {}
    for setup in problem.sides:
        rows = data[data[:, 0] == setup.side]
        col = {n: rows[:, k] for k, n in enumerate(FIELD_COLUMNS)}
        grid = setup.grid
        y1, y2 = grid.coords()
        if rows.shape[0] != grid.n_nodes or not np.allclose(col["y1"], y1, rtol=0, atol=1e-12) \
                or not np.allclose(col["y2"], setup.side * y2, rtol=0, atol=1e-12):
            raise RunError(f"{run}/fields.csv does not match the grid of side {setup.side:+d}")
        state = gas.FlowState(col["rho"], col["u1"], col["u2"], col["p"])
        physicals.append(PhysicalField(setup.side, grid, col["y1"], col["y2"], col["x1"], col["x2"], state))
        v["plus" if setup.side > 0 else "minus"] = (col["v1"], col["v2"])
    with open(run / "newton_trace.json") as fh:
        newton = json.load(fh)
    return StoredRun(rc, rc.epsilon, problem, slip, tuple(physicals), v, newton)


def report_for(run: StoredRun) -> verify.VerificationReport:
    problem, slip = run.problem, run.slip
    names = {1: "plus", -1: "minus"}
    gprime = {names[s.side]: boundary_fn(problem.profile, slip, s.side).gprime for s in problem.sides}
    B0 = {names[s.side]: s.inv.B for s in problem.sides}
    v20 = {names[s.side]: s.v20 for s in problem.sides}
    trace = run.newton.get("trace", [])
    last = trace[-1] if trace else {}
    newton = {"converged": run.newton.get("converged"), "status": run.newton.get("status"),
              "steps": run.newton.get("steps"), "jump_sup": last.get("jump_sup"),
              "solvability_pairing": last.get("solvability_pairing")}
    rep = verify.build_report(run.physicals, run.v, slip if run.epsilon != 0 else None, gprime,
                              problem.law.gamma, B0, v20, problem.config.tol_p,
                              problem.config.alpha, problem.config.beta, newton)
    if run.epsilon != 0:
        dev = max(max(np.max(np.abs(v1)), np.max(np.abs(v2 - v20[k]))) for k, (v1, v2) in run.v.items())
        rep.epsilon_linearity_ratios = {"w_sup_over_eps": float(np.max(np.abs(slip.w)) / abs(run.epsilon)),
                                        "dev_sup_over_eps": float(dev / abs(run.epsilon))}
    return rep


# ---------------------------------------------------------------- runs

def _with_threads(rc: RunConfig, threads: int | None) -> RunConfig:
    if threads is None:
        return rc
    if threads < 1:
        raise ConfigError("threads", "must be at least 1")
    return replace(rc, solver=replace(rc.solver, threads=int(threads)))


def solve_run(rc: RunConfig, eps: float, out: Path) -> tuple[int, NewtonResult | None]:
    """Newton solve at eps, write the run directory and report; returns (exit code, result)."""
    problem = build_problem(rc.solver)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = newton_solve(eps, problem, raise_on_divergence=False)
    except (QuadrantError, gas.GasError) as exc:
        log.error("solve at eps=%g failed: %s", eps, exc)
        write_json(out / "config.json", {**rc.to_dict(), "epsilon": eps})
        write_json(out / "newton_trace.json", {"eps": eps, "converged": False, "status": "failed",
                                               "error": str(exc),
                                               "trace": getattr(exc, "history", None) or []})
        return EXIT_FAIL, None
    write_run(out, rc, eps, res, problem)
    report = report_for(read_run(out))
    report.to_json(out / "report.json")
    log.info("eps=%g %s after %d steps, |[p]| = %.3e", eps, res.status, res.steps, res.jump.sup)
    if not res.converged:
        log.error("Newton did not converge at eps=%g (%s, |[p]| = %.3e > tol_p = %.1e)",
                  eps, res.status, res.jump.sup, rc.solver.tol_p)
        return EXIT_FAIL, res
    return EXIT_OK, res


def sweep_run(rc: RunConfig, out: Path) -> tuple[int, dict]:
    if len(rc.epsilons) < 2:
        raise ConfigError("epsilons", "sweep needs at least 2 entries")
    out.mkdir(parents=True, exist_ok=True)
    code, members, slips = EXIT_OK, [], []
    for k, eps in enumerate(rc.epsilons):
        sub = out / f"eps_{k:02d}"
        c, res = solve_run(rc, eps, sub)
        code = max(code, c)
        entry = {"epsilon": eps, "dir": sub.name, "exit_code": c,
                 "converged": bool(res is not None and res.converged)}
        if res is not None:
            dev = max(s.deviation() for s in res.solutions)
            entry.update(jump_sup=res.jump.sup, w_sup=float(np.max(np.abs(res.w))), dev_sup=dev)
            if eps != 0:
                entry.update(w_sup_over_eps=entry["w_sup"] / abs(eps), dev_sup_over_eps=dev / abs(eps))
            slips.append(res.slip)
        members.append(entry)
    out_d = {"epsilons": list(rc.epsilons), "members": members,
             "all_converged": all(m["converged"] for m in members)}
    if len(slips) >= 2:
        st = verify.stability_sweep(slips, rc.solver.alpha, rc.solver.beta, seed=rc.solver.seed)
        out_d["stability"] = st.to_dict()
    write_json(out / "stability.json", out_d)
    return code, out_d


def _out_dir(rc: RunConfig, out: str | None, config_path: str) -> Path:
    if out:
        return Path(out)
    if rc.out_dir:
        return Path(rc.out_dir)
    return Path("runs") / Path(config_path).stem


# ---------------------------------------------------------------- click

@click.group()
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def main(log_level):
    """Subsonic flow past a cusped airfoil with a free slip line."""
    logging.basicConfig(level=getattr(logging, log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


_out_opt = click.option("--out", envvar="SLIPLINE_OUT", default=None,
                        help="Output directory (env SLIPLINE_OUT).")
_threads_opt = click.option("--threads", envvar="SLIPLINE_THREADS", type=int, default=None,
                            help="Worker threads (env SLIPLINE_THREADS).")


def _load(config_path, threads) -> RunConfig:
    try:
        return _with_threads(load_config(config_path), threads)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@_out_opt
@_threads_opt
def solve(config_path, out, threads):
    """Locate the slip line for the config's epsilon."""
    rc = _load(config_path, threads)
    if rc.epsilon is None:
        click.echo("config error: epsilon: required for solve", err=True)
        sys.exit(EXIT_CONFIG)
    dest = _out_dir(rc, out, config_path)
    try:
        code, res = solve_run(rc, rc.epsilon, dest)
    except (GridError, GeometryError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if res is not None:
        click.echo(f"eps={rc.epsilon:g} {res.status} steps={res.steps} |[p]|={res.jump.sup:.3e} -> {dest}")
    sys.exit(code)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@_out_opt
@_threads_opt
def sweep(config_path, out, threads):
    """Solve for every epsilon in the list and compare the slip lines."""
    rc = _load(config_path, threads)
    try:
        code, d = sweep_run(rc, _out_dir(rc, out, config_path))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for m in d["members"]:
        click.echo(f"eps={m['epsilon']:g} converged={m['converged']} jump={m.get('jump_sup', float('nan')):.3e}")
    if "stability" in d:
        click.echo(f"stability constant {d['stability']['stability_constant']:.6g}")
    sys.exit(code)


@main.command(name="verify")
@click.option("--run", "run_dir", required=True, type=click.Path(file_okay=False))
def verify_cmd(run_dir):
    """Recompute the verification report from a stored run."""
    try:
        report = report_for(read_run(run_dir))
    except (RunError, ConfigError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(report.summary())
    sys.exit(EXIT_OK if report.passed else EXIT_FAIL)


if __name__ == "__main__":
    main()
