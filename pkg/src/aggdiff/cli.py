"""Command line front end: steady states, evolutions, JKO runs, s-scans, and the check suite.

Every subcommand accepts ``--config file.toml``; flags given on the command
line override the file. Results go to an output directory together with a
``meta.json`` describing the run, and a JSON summary is printed to stdout.
Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .energy import write_energy_csv
from .evolution import breach_amount, evolve, monotonicity_breach
from .grid import Density, Grid, Params, gaussian, indicator, lp_norm, mollified_counterexample, write_density_csv
from .jko import jko_run, write_estimates_csv
from .steady import (
    default_initial,
    fixed_point_solve,
    limit_profile,
    steady_diagnostics,
    suggest_half_width,
)
from .riesz import build_weights

log = logging.getLogger("aggdiff")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2
COMMANDS = ("steady", "evolve", "jko", "limit-scan", "verify")
DATA = ("two-bump", "gaussian", "mollifier", "indicator")


class UsageError(Exception):
    pass


# -- presets -------------------------------------------------------------------

PRESETS: dict[str, dict[str, Any]] = {
    "fig1-left": {
        "command": "limit-scan",
        "params": {"m": 3.0, "beta": 0.0, "chi": 1.0},
        "run": {"s_values": [0.25, 0.15, 0.1, 0.05]},
        "grid": {"L": 4.0, "n": 2048},
    },
    "fig1-right": {
        "command": "limit-scan",
        "params": {"m": 3.0, "beta": 0.2, "chi": 1.0},
        "run": {"s_values": [0.25, 0.15, 0.1, 0.05]},
        "grid": {"L": 4.0, "n": 2048},
    },
    "fig2": {
        "command": "evolve",
        "params": {"m": 3.0, "beta": 0.2, "chi": 1.0, "s": 0.1},
        "run": {"data": "two-bump", "T": 30.0},
        "grid": {"L": 4.0, "n": 1024},
    },
    "fig3": {
        "command": "evolve",
        "params": {"m": 3.0, "beta": 0.4, "chi": 1.0, "s": 0.08},
        "run": {"data": "gaussian", "std": 1.0, "T": 4.0},
        "grid": {"L": 9.0, "n": 1024},
    },
    "fig4": {
        "command": "evolve",
        "params": {"m": 3.0, "beta": 0.0, "chi": 1.0, "s": 0.1},
        "run": {"data": "mollifier", "T": 1.0, "n_out": 200},
        "grid": {"L": 4.0, "n": 1024},
    },
    "fig5": {
        "command": "evolve",
        "params": {"m": 3.0, "beta": 0.0, "chi": 1.0, "s": 0.1},
        "run": {"data": "indicator", "T": 1.0, "n_out": 200},
        "grid": {"L": 4.0, "n": 1024},
    },
}

RUN_DEFAULTS: dict[str, Any] = {
    "T": 1.0,
    "n_out": 20,
    "data": "gaussian",
    "std": 0.5,
    "tau": 1e-3,
    "steps": 50,
    "K": 256,
    "s_values": [0.2, 0.1, 0.05, 0.02],
    "jobs": 1,
    "only": None,
    "mutate": None,
    "diag": None,
}

RUN_KEYS_BY_COMMAND = {
    "steady": (),
    "evolve": ("data", "std", "T", "n_out"),
    "jko": ("data", "std", "tau", "steps", "K"),
    "limit-scan": ("s_values", "jobs"),
    "verify": ("only", "jobs"),
}


@dataclass
class ExperimentConfig:
    command: str
    params: Params
    L: float | None = None
    n: int = 1024
    tol: float = 1e-10
    max_iter: int = 20000
    out: Path | None = None
    preset: str | None = None
    seed: int = 0
    run: dict[str, Any] = field(default_factory=lambda: dict(RUN_DEFAULTS))

    def grid(self, p: Params | None = None) -> Grid:
        L = self.L if self.L is not None else suggest_half_width(p or self.params)
        return Grid(float(L), int(self.n))

    def meta(self, timings: dict[str, float], extra: dict | None = None) -> dict:
        out = {
            "command": self.command,
            "preset": self.preset,
            "params": asdict(self.params),
            "grid": {"L": self.grid().half_width, "n": self.n},
            "tolerances": {"tol": self.tol, "max_iter": self.max_iter},
            "seed": self.seed,
            "version": __version__,
            "timings": timings,
            "run": {k: self.run[k] for k in RUN_KEYS_BY_COMMAND[self.command]},
        }
        if extra:
            out.update(extra)
        return out


# -- argument handling ---------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aggdiff", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command")

    def common(sp, n_default):
        sp.add_argument("--config", type=Path)
        sp.add_argument("--preset")
        sp.add_argument("--m", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--chi", type=float)
        sp.add_argument("--s", type=float)
        sp.add_argument("--mass", type=float)
        sp.add_argument("--L", type=float)
        sp.add_argument("--n", type=int, help=f"number of cells (default {n_default})")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", type=int, dest="max_iter")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path)

    sp = sub.add_parser("steady", help="fixed-point steady state")
    common(sp, 2048)
    sp.add_argument("--diag", type=Path, help="diagnostics JSON path")

    sp = sub.add_parser("evolve", help="finite-volume time integration")
    common(sp, 1024)
    sp.add_argument("--T", type=float)
    sp.add_argument("--n-out", type=int, dest="n_out")
    sp.add_argument("--std", type=float, help="width of the gaussian datum")

    sp = sub.add_parser("jko", help="minimizing-movement run")
    common(sp, 1024)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--K", type=int)
    sp.add_argument("--std", type=float, help="width of the gaussian datum")

    sp = sub.add_parser("limit-scan", help="steady states over a list of s")
    common(sp, 2048)
    sp.add_argument("--s-values", type=float, nargs="+", dest="s_values")
    sp.add_argument("--jobs", type=int)

    sp = sub.add_parser("verify", help="run the invariant suite")
    sp.add_argument("--config", type=Path)
    sp.add_argument("--only", nargs="+", help="restrict to these modules")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--mutate", help=argparse.SUPPRESS)
    return ap


_PARAM_KEYS = ("m", "beta", "chi", "s", "mass")
_RUN_KEYS = tuple(RUN_DEFAULTS)


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not text.strip():
        raise UsageError(f"config file {path} is empty")
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from exc


def build_config(ns: argparse.Namespace) -> ExperimentConfig:
    """Layer defaults, preset, config file, and flags (later layers win)."""
    raw: dict[str, Any] = {"params": {}, "grid": {}, "solver": {}, "run": {}}
    file_cfg = load_config(ns.config) if getattr(ns, "config", None) else {}
    preset = getattr(ns, "preset", None) or file_cfg.get("preset")
    command = ns.command or file_cfg.get("command")
    if preset is not None:
        if preset in PRESETS:
            pre = PRESETS[preset]
            if command is not None and command != pre["command"]:
                raise UsageError(f"preset {preset!r} belongs to '{pre['command']}', not '{command}'")
            command = pre["command"]
            raw = _merge(raw, {k: v for k, v in pre.items() if k != "command"})
        elif preset in DATA and command in (None, "evolve", "jko"):
            command = command or "evolve"
            raw["run"]["data"] = preset
        else:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS) + list(DATA)}")
    if command is None:
        raise UsageError("no command given (pass a subcommand or set 'command' in the config file)")
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}; choose from {COMMANDS}")
    known = {"command", "preset", "params", "grid", "solver", "run", "out", "seed"}
    unknown = set(file_cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    raw = _merge(raw, {k: v for k, v in file_cfg.items() if k in ("params", "grid", "solver", "run")})
    for section, keys in (("params", _PARAM_KEYS), ("grid", ("L", "n")), ("solver", ("tol", "max_iter"))):
        bad = set(raw[section]) - set(keys)
        if bad:
            raise UsageError(f"unknown keys in [{section}]: {sorted(bad)}")
    bad = set(raw["run"]) - set(_RUN_KEYS)
    if bad:
        raise UsageError(f"unknown keys in [run]: {sorted(bad)}")

    flags = vars(ns)
    for k in _PARAM_KEYS:
        if flags.get(k) is not None:
            raw["params"][k] = flags[k]
    for k in ("L", "n"):
        if flags.get(k) is not None:
            raw["grid"][k] = flags[k]
    for k in ("tol", "max_iter"):
        if flags.get(k) is not None:
            raw["solver"][k] = flags[k]
    for k in _RUN_KEYS:
        if flags.get(k) is not None:
            raw["run"][k] = flags[k]

    try:
        params = Params(**raw["params"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid parameters: {exc}") from exc
    run = dict(RUN_DEFAULTS)
    run.update(raw["run"])
    if run["data"] not in DATA:
        raise UsageError(f"unknown initial datum {run['data']!r}; choose from {DATA}")
    n_default = 2048 if command in ("steady", "limit-scan") else 1024
    n = int(raw["grid"].get("n", n_default))
    if n < 4 or n % 2:
        raise UsageError(f"n must be an even integer >= 4, got {n}")
    L = raw["grid"].get("L")
    if L is not None and not L > 0:
        raise UsageError(f"L must be positive, got {L}")
    out = flags.get("out") or file_cfg.get("out")
    seed = flags.get("seed")
    if seed is None:
        seed = int(file_cfg.get("seed", 0))
    if command == "verify":
        from .verify import CHECKS, MUTATIONS

        bad = set(run["only"] or ()) - set(CHECKS)
        if bad:
            raise UsageError(f"unknown modules for --only: {sorted(bad)}; choose from {list(CHECKS)}")
        if run["mutate"] is not None and run["mutate"] not in MUTATIONS:
            raise UsageError(f"unknown mutation {run['mutate']!r}")
    if int(run["jobs"]) < 1:
        raise UsageError("--jobs must be at least 1")
    cfg = ExperimentConfig(
        command=command,
        params=params,
        L=None if L is None else float(L),
        n=n,
        tol=float(raw["solver"].get("tol", 1e-10)),
        max_iter=int(raw["solver"].get("max_iter", 20000)),
        out=None if out is None else Path(out),
        preset=preset,
        seed=int(seed),
        run=run,
    )
    if command != "verify" and cfg.out is not None:
        target = cfg.out.parent if command == "steady" and cfg.out.suffix else cfg.out
        try:
            target.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"output location {target} is not writable: {exc}") from exc
        if not os.access(target, os.W_OK):
            raise UsageError(f"output location {target} is not writable")
    return cfg


# -- commands ------------------------------------------------------------------


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not JSON serializable: {type(x)}")


def _finite(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def run_steady(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    grid = cfg.grid()
    t0 = time.perf_counter()
    st = fixed_point_solve(p, grid=grid, tol=cfg.tol, max_iter=cfg.max_iter)
    elapsed = time.perf_counter() - t0
    W = build_weights(grid, p.s)
    d = steady_diagnostics(st.rho, p, W)
    diag = {
        "c_s": st.c_s,
        "iterations": st.iterations,
        "residual": st.residual,
        "virial_residual": st.virial_residual,
        "cs_consistency": st.cs_consistency,
        "height": d.height,
        "support_radius": d.support_radius,
        "energy": d.as_dict()["energy"],
        "virial_relative": d.virial_relative,
        "cs_relative": d.cs_relative,
        "polish_iterations": st.polish_iterations,
        "polish_residual": _finite(st.polish_residual),
        "converged": st.converged,
        "collapsed": st.collapsed,
    }
    checks = {
        "converged": st.converged,
        "virial_relative<=1e-3": d.virial_relative <= 1e-3,
        "cs_relative<=1e-3": d.cs_relative <= 1e-3,
        "energy_negative": d.energy.total < 0,
    }
    if cfg.out is not None:
        profile = cfg.out if cfg.out.suffix else cfg.out / "profile.csv"
        profile.parent.mkdir(parents=True, exist_ok=True)
        write_density_csv(profile, st.rho)
        diag_path = Path(cfg.run["diag"]) if cfg.run.get("diag") else profile.parent / "diag.json"
        _write_json(diag_path, diag)
        _write_json(profile.parent / "meta.json", cfg.meta({"solve": elapsed}))
    return {"command": "steady", "diagnostics": diag, "checks": checks}


def initial_datum(name: str, grid: Grid, p: Params, std: float = 0.5) -> Density:
    if name == "two-bump":
        v = gaussian(grid, -1.0, 0.3, 0.5 * p.mass).values + gaussian(grid, 1.0, 0.3, 0.5 * p.mass).values
        return Density(grid, v)
    if name == "gaussian":
        return gaussian(grid, 0.0, std, p.mass)
    if name == "mollifier":
        return mollified_counterexample(grid, 0.1, 4.0)
    if name == "indicator":
        return indicator(grid, -1.5, 1.5, 0.25)
    raise UsageError(f"unknown initial datum {name!r}")


def run_evolve(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    grid = cfg.grid()
    r = cfg.run
    rho0 = initial_datum(r["data"], grid, p, float(r["std"]))
    T = float(r["T"])
    outs = list(np.linspace(0.0, T, int(r["n_out"]) + 1)[1:])
    t0 = time.perf_counter()
    tr = evolve(p, rho0, T, outs)
    elapsed = time.perf_counter() - t0
    breach = monotonicity_breach(tr)
    slack = 1e-8 * (1 + np.abs(tr.step_energies[1:]))
    energy_ok = bool(np.all(tr.energy_increases() <= slack))
    mass0 = rho0.mass
    summary = {
        "steps": int(tr.dt_history.size),
        "dt_min": float(tr.dt_history.min()),
        "dt_max": float(tr.dt_history.max()),
        "mass_drift": tr.mass_drift,
        "boundary_mass": tr.boundary_mass,
        "breach_time": breach,
        "final_energy": tr.energy_log[-1].total,
        "max_energy_increase": float(tr.energy_increases().max()),
    }
    checks = {
        "mass_conserved": tr.mass_drift <= 1e-12 * mass0,
        "energy_nonincreasing": energy_ok,
        "boundary_mass_small": tr.boundary_mass <= 1e-8 * mass0,
    }
    if cfg.out is not None:
        for t, rho in zip(tr.times, tr.states):
            write_density_csv(cfg.out / f"state_{t:.6f}.csv", rho)
        write_energy_csv(cfg.out / "energy.csv", tr.times, tr.energy_log)
        _write_json(cfg.out / "meta.json", cfg.meta({"evolve": elapsed}, {"summary": summary}))
    return {"command": "evolve", "summary": summary, "checks": checks}


def run_jko(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    grid = cfg.grid()
    r = cfg.run
    rho0 = initial_datum(r["data"], grid, p, float(r["std"]))
    t0 = time.perf_counter()
    run = jko_run(p, rho0, float(r["tau"]), int(r["steps"]), n_particles=int(r["K"]))
    elapsed = time.perf_counter() - t0
    lhs, rhs = run.basic1()
    tele, f0 = run.telescoped()
    bound = run.second_moment_bound()
    checks = {
        "basic1_each_step": bool(np.all(lhs <= rhs + 1e-8)),
        "telescoped": bool(np.all(tele <= f0 + 1e-8 * max(1, run.n_steps))),
        "second_moment_bound": bool(np.all(np.asarray(run.second_moments) <= bound + 1e-12)),
        "inner_converged": all(run.converged),
    }
    if cfg.out is not None:
        states = cfg.out / "states"
        states.mkdir(parents=True, exist_ok=True)
        for k, rho in enumerate(run.states):
            write_density_csv(states / f"state_{k:05d}.csv", rho)
        write_estimates_csv(cfg.out / "estimates.csv", run)
        _write_json(cfg.out / "meta.json", cfg.meta({"jko": elapsed}))
    summary = {"steps": run.n_steps, "energy_first": run.energies[0], "energy_last": run.energies[-1]}
    return {"command": "jko", "summary": summary, "checks": checks}


def _scan_one(args) -> dict:
    p, L, n, tol, max_iter = args
    grid = Grid(L, n)
    t0 = time.perf_counter()
    st = fixed_point_solve(p, grid=grid, tol=tol, max_iter=max_iter)
    d = steady_diagnostics(st.rho, p, build_weights(grid, p.s))
    return {
        "s": p.s,
        "values": st.rho.values,
        "height": d.height,
        "energy": d.energy.total,
        "virial_relative": d.virial_relative,
        "cs_relative": d.cs_relative,
        "converged": st.converged,
        "seconds": time.perf_counter() - t0,
    }


def run_limit_scan(cfg: ExperimentConfig) -> dict:
    p0 = cfg.params
    s_values = [float(s) for s in cfg.run["s_values"]]
    if not s_values:
        raise UsageError("empty s_values")
    if cfg.L is None:
        L = max(suggest_half_width(p0.replace(s=s)) for s in s_values)
    else:
        L = cfg.L
    grid = Grid(L, cfg.n)
    jobs = [(p0.replace(s=s), L, cfg.n, cfg.tol, cfg.max_iter) for s in s_values]
    workers = int(cfg.run.get("jobs") or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_one, jobs))
    else:
        results = [_scan_one(j) for j in jobs]
    order = np.argsort(s_values)[::-1]  # decreasing s
    heights = [results[i]["height"] for i in order]
    energies = [results[i]["energy"] for i in order]
    rows = []
    limit = None
    if p0.beta < p0.chi / 2:
        limit = limit_profile(p0, grid)
    for r in results:
        row = {k: v for k, v in r.items() if k != "values"}
        if limit is not None:
            diff = Density(grid, np.abs(r["values"] - limit.values))
            row["l3_to_limit"] = lp_norm(diff, 3)
        rows.append(row)
    checks = {
        "all_converged": all(r["converged"] for r in results),
        "identities<=1e-3": all(r["virial_relative"] <= 1e-3 and r["cs_relative"] <= 1e-3 for r in results),
        "energies_negative": all(e < 0 for e in energies),
    }
    if limit is not None:
        target = limit.values.max()
        l3 = [rows[i]["l3_to_limit"] for i in order]
        checks["heights_monotone_toward_limit"] = bool(
            np.all(np.diff(np.abs(np.array(heights) - target)) < 0)
        )
        checks["l3_decreasing"] = bool(np.all(np.diff(l3) < 0))
    else:
        checks["sup_norm_decreasing"] = bool(np.all(np.diff(heights) < 0))
        checks["energy_increasing"] = bool(np.all(np.diff(energies) > 0))
    if cfg.out is not None:
        for r in results:
            write_density_csv(cfg.out / f"profile_s{r['s']:g}.csv", Density(grid, r["values"]))
        if limit is not None:
            write_density_csv(cfg.out / "limit.csv", limit)
        _write_json(cfg.out / "scan.json", {"rows": rows, "checks": checks})
        timings = {f"s={r['s']:g}": r["seconds"] for r in results}
        _write_json(cfg.out / "meta.json", cfg.meta(timings, {"grid": {"L": L, "n": cfg.n}}))
    return {"command": "limit-scan", "rows": rows, "checks": checks}


def run_verify(cfg: ExperimentConfig) -> dict:
    from .verify import run_suite

    report = run_suite(
        only=cfg.run.get("only"),
        seed=cfg.seed,
        jobs=int(cfg.run.get("jobs") or 1),
        mutate=cfg.run.get("mutate"),
    )
    checks = {c["name"]: c["passed"] for c in report}
    for c in report:
        flag = "PASS" if c["within_threshold"] else ("WARN" if c["advisory"] else "FAIL")
        print(f"{flag}  {c['module']:<10} {c['name']:<44} {c['value']:<12.4g} {c['op']} {c['threshold']:.3g}",
              file=sys.stderr)
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        _write_json(cfg.out / "verify.json", {"checks": report, "seed": cfg.seed, "version": __version__})
    return {"command": "verify", "checks": checks, "report": report}


RUNNERS = {
    "steady": run_steady,
    "evolve": run_evolve,
    "jko": run_jko,
    "limit-scan": run_limit_scan,
    "verify": run_verify,
}


def run_config(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Dispatch one experiment and return ``(exit code, summary)``."""
    try:
        summary = RUNNERS[cfg.command](cfg)
    except (ValueError, RuntimeError, FloatingPointError, OverflowError) as exc:
        log.error("%s failed: %s", cfg.command, exc)
        return EXIT_NUMERICAL, {"command": cfg.command, "error": str(exc)}
    ok = all(summary.get("checks", {}).values())
    summary["passed"] = ok
    return (EXIT_OK if ok else EXIT_NUMERICAL), summary


def main(argv: list[str] | None = None) -> int:
    ap = _parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with exit code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(ns)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"aggdiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    code, summary = run_config(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
