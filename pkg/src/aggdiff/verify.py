"""Invariant suite behind ``aggdiff verify``.

Every check returns one or more :class:`Check` records (measured value,
comparison, threshold). Checks are grouped by module and can be spread
over a process pool; each check draws from its own seeded generator, so a
report is reproducible for a given ``--seed`` independently of ``--jobs``.
"""

from __future__ import annotations

import filecmp
import json
import math
import tempfile
import time
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import special
from .energy import free_energy, lower_bound_check
from .evolution import breach_amount, evolve, monotonicity_breach
from .grid import (
    Density,
    Grid,
    Params,
    dilate,
    from_function,
    gaussian,
    indicator,
    lp_norm,
    moments,
    mollified_counterexample,
    normalize_to_class,
    random_density,
    read_density_csv,
    write_density_csv,
)
from .jko import Quantile, jko_objective, jko_run, w2_distance
from .nodes import NodeDensity
from .riesz import build_weights, convolve, gaussian_test_function, symmetric_form, truncation_l1_bound
from .steady import (
    ball_radius,
    discrete_steady_state,
    fixed_point_solve,
    limit_profile,
    steady_diagnostics,
    suggest_half_width,
)


@dataclass
class Check:
    module: str
    name: str
    value: float
    threshold: float
    op: str = "<="
    advisory: bool = False
    """Reported but not counted: a documented, understood deviation."""
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        v, t = self.value, self.threshold
        if not math.isfinite(v):
            return False
        return {"<=": v <= t, ">=": v >= t, "<": v < t, ">": v > t, "==": v == t}[self.op]


# -- mutation hook -------------------------------------------------------------


MUTATIONS = ("sds", "riesz")


@contextmanager
def mutation(name: str | None):
    """Deliberately corrupt a constant so the suite can prove it notices."""
    if not name:
        yield
        return
    if name not in MUTATIONS:
        raise ValueError(f"unknown mutation {name!r}")
    attr = f"{name}_constant"
    saved = getattr(special, attr)
    original = saved.__wrapped__

    def corrupted(d, s):
        return original(d, s) * (1.0 + 1e-9)

    setattr(special, attr, corrupted)
    try:
        yield
    finally:
        setattr(special, attr, saved)


# -- special -------------------------------------------------------------------


def _special_gamma(rng) -> list[Check]:
    x = rng.uniform(0.01, 0.99, 100)
    refl = max(abs(special.gamma(t) * special.gamma(1 - t) * math.sin(math.pi * t) / math.pi - 1) for t in x)
    y = rng.uniform(0.01, 10.0, 100)
    rec = max(abs(special.gamma(t + 1) / (t * special.gamma(t)) - 1) for t in y)
    return [
        Check("special", "gamma_reflection", refl, 1e-10),
        Check("special", "gamma_recurrence_rel", rec, 1e-12),
    ]


def _special_constants(rng) -> list[Check]:
    s = rng.uniform(1e-3, 0.5 - 1e-3, 100)
    rel = max(
        abs(special.sds_constant(1, t) / (special.riesz_constant(1, t) * special.hls_constant(1, t)) - 1)
        for t in s
    )
    value = abs(special.riesz_constant(1, 0.25) - 0.3989422804)
    # c_{1,s}/s -> pi^{-1/2} Gamma(1/2) = 1; Richardson on s = 1e-3, 1e-4 removes the O(s) term
    lim = [special.riesz_constant(1, t) / t for t in (1e-2, 1e-3, 1e-4)]
    extrap = (10 * lim[2] - lim[1]) / 9
    bounded = max((1 - 2 * t) * special.riesz_constant(1, t) for t in np.linspace(0.01, 0.49, 25))
    return [
        Check("special", "sds_identity_rel", rel, 1e-11),
        Check("special", "riesz_constant(1,0.25)", value, 1e-9),
        Check("special", "small_s_limit_extrapolated", abs(extrap - 1.0), 1e-2),
        Check("special", "small_s_limit_monotone", float(abs(lim[2] - 1) < abs(lim[1] - 1) < abs(lim[0] - 1)), 1.0, "=="),
        Check("special", "(d-2s)c_ds_bounded", bounded, 1.0),
    ]


# -- grid ----------------------------------------------------------------------


def _grid_checks(rng) -> list[Check]:
    g = Grid(4.0, 512)
    a, b = rng.uniform(0.1, 1.0), rng.uniform(-0.2, 0.2)
    lin = Density(g, a + b * g.centers)
    mo = moments(lin)
    exact_mass = 2 * a * g.half_width
    exact_first = b * (2 * g.half_width**3 / 3 - g.half_width * g.dx**2 / 6)
    moment_err = max(abs(mo.mass - exact_mass), abs(mo.center_of_mass * mo.mass - exact_first))

    rho = gaussian(g, 0.0, 0.4)
    l1, l2 = rng.uniform(0.8, 1.25, 2)
    twice = dilate(dilate(rho, l1), l2)
    once = dilate(rho, l1 * l2)
    comp = float(np.abs(twice.values - once.values).sum() * g.dx)

    worst_mass = worst_com = 0.0
    for _ in range(20):
        r = random_density(g, rng, mass=rng.uniform(0.5, 2.0))
        M = rng.uniform(0.5, 2.0)
        try:
            out = normalize_to_class(r, M)
        except ValueError:  # rescaling would leave the box
            continue
        worst_mass = max(worst_mass, abs(out.mass - M) / M)
        worst_com = max(worst_com, abs(moments(out).center_of_mass) / g.dx)

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "rho.csv"
        r = random_density(g, rng)
        write_density_csv(path, r)
        back = read_density_csv(path)
        roundtrip = float(np.max(np.abs(back.values - r.values)))
    return [
        Check("grid", "moments_exact_linear", moment_err, 1e-12),
        Check("grid", "dilate_composition_l1_over_dx", comp / g.dx, 4.0),
        Check("grid", "normalize_mass_rel", worst_mass, 1e-10),
        Check("grid", "normalize_com_over_dx", worst_com, 0.5),
        Check("grid", "csv_roundtrip", roundtrip, 0.0),
    ]


# -- riesz ---------------------------------------------------------------------


def _riesz_convergence(rng) -> list[Check]:
    s = 0.25
    exact = special.riesz_constant(1, s) / s  # c * int_{-1}^{1} |y|^{2s-1} dy
    errs = []
    for n in (64, 128, 256, 512):
        g = Grid(2.0, n)
        rho = Density(g, (np.abs(g.centers) < 1).astype(float))
        pot = convolve(rho, build_weights(g, s))
        mid = n // 2
        errs.append(abs(0.5 * (pot[mid - 1] + pot[mid]) - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))

    g = Grid(4.0, 256)
    W = build_weights(g, 0.2)
    rho = random_density(g, rng)
    c, w = rng.uniform(-0.5, 0.5), rng.uniform(0.5, 1.0)
    phi = gaussian_test_function(c, w)
    mirrored = gaussian_test_function(-c, w)
    a = symmetric_form(rho, phi, W)
    b = symmetric_form(rho.reflect(), mirrored, W)
    return [
        Check("riesz", "convolution_order_min", float(orders.min()), 1.0, ">="),
        Check("riesz", "symmetric_form_reflection", abs(a - b) / max(abs(a), 1e-300), 1e-12),
    ]


def _riesz_collapse(rng) -> list[Check]:
    g = Grid(4.0, 2048)
    base = gaussian(g, 0.0, 0.5)
    phi = gaussian_test_function(0.3, 0.7)
    pert = from_function(g, lambda x: x * np.exp(-2 * x * x))  # zero mass
    errs = []
    for s in (0.1, 0.05, 0.02):
        W = build_weights(g, s)
        rho = Density(g, np.maximum(base.values + s * 0.1 * pert.values, 0.0))
        local = float((rho.values**2 * phi.d2(g.centers)).sum() * g.dx)
        errs.append(abs(symmetric_form(rho, phi, W) - local))
    trunc = []
    rho = gaussian(g, 0.0, 0.5)
    s = 0.25
    exact = convolve(rho, build_weights(g, s))
    for eps in (g.dx, g.dx / 2, g.dx / 4):
        diff = float(np.abs(convolve(rho, build_weights(g, s, eps)) - exact).sum() * g.dx)
        trunc.append(diff / truncation_l1_bound(rho, s, eps))
    return [
        Check("riesz", "kernel_collapse_monotone", float(errs[0] > errs[1] > errs[2]), 1.0, "=="),
        Check("riesz", "truncation_within_bound", max(trunc), 1.0 + 1e-9),
    ]


# -- energy --------------------------------------------------------------------


def _energy_checks(rng) -> list[Check]:
    p = Params(m=3.0, beta=0.3, chi=1.0, s=0.2)
    g = Grid(4.0, 1024)
    W = build_weights(g, p.s)
    rho = random_density(g, rng)
    e1 = free_energy(rho, p, W).total
    e2 = free_energy(rho.reflect(), p, W).total
    refl = abs(e1 - e2) / abs(e1)

    smooth = gaussian(g, 0.0, 0.4)
    lam = 1.2
    scaled = dilate(smooth, lam)
    a, b = free_energy(smooth, p, W), free_energy(scaled, p, W)
    factors = [
        abs(b.h_m / a.h_m / lam ** (p.m - 1) - 1),
        abs(b.quad / a.quad / lam - 1),
        abs(b.w_s / a.w_s / lam ** (1 - 2 * p.s) - 1),
    ]
    worst = 0.0
    for _ in range(20):
        r = random_density(g, rng)
        rep = lower_bound_check(r, p, W)
        worst = max(worst, rep.hls_lhs / rep.hls_rhs)
    return [
        Check("energy", "reflection_invariance_rel", refl, 1e-13),
        Check("energy", "dilation_scaling_rel", max(factors), 1e-4),
        Check("energy", "hls_chain_ratio", worst, 1.0),
    ]


# -- steady --------------------------------------------------------------------

SCAN = (0.2, 0.1, 0.05, 0.02)


def _scan(p: Params, grid: Grid, s_values=SCAN):
    out = []
    for s in s_values:
        q = p.replace(s=s)
        st = fixed_point_solve(q, grid=grid)
        d = steady_diagnostics(st.rho, q, build_weights(grid, s))
        out.append((st, d))
    return out


def _identity_checks(tag: str, scan) -> list[Check]:
    return [
        Check("steady", f"{tag}_converged", float(all(st.converged for st, _ in scan)), 1.0, "=="),
        Check("steady", f"{tag}_virial_rel", max(d.virial_relative for _, d in scan), 1e-3),
        Check("steady", f"{tag}_cs_rel", max(d.cs_relative for _, d in scan), 1e-3),
        Check("steady", f"{tag}_energy_max", max(d.energy.total for _, d in scan), 0.0, "<"),
    ]


def _shape_defects(rho: Density) -> tuple[float, float]:
    v = rho.values
    even = float(np.max(np.abs(v - v[::-1])) / v.max())
    half = v[v.size // 2 :]
    rise = float(np.max(np.maximum.accumulate(half[::-1])[::-1] - half) / v.max())
    return even, rise


def _steady_limit(rng) -> list[Check]:
    checks = []
    for beta, target in ((0.0, 0.5), (0.2, 0.3)):
        p = Params(m=3.0, beta=beta, chi=1.0)
        g = Grid(4.0, 2048)
        scan = _scan(p, g)
        lim = limit_profile(p, g)
        heights = np.array([d.height for _, d in scan])
        l3 = np.array([lp_norm(Density(g, np.abs(st.rho.values - lim.values)), 3) for st, _ in scan])
        tag = f"beta={beta:g}"
        gap = np.abs(heights - target)
        checks += [
            Check("steady", f"{tag}_heights_toward_limit", float(np.all(np.diff(gap) < 0)), 1.0, "=="),
            Check("steady", f"{tag}_final_height_error", float(gap[-1]), 0.05),
            Check("steady", f"{tag}_l3_decreasing", float(np.all(np.diff(l3) < 0)), 1.0, "=="),
        ]
        if beta == 0.0:
            # the s = 0.02 profile still has soft edges of width ~0.1; see README
            checks.append(Check("steady", f"{tag}_final_l3", float(l3[-1]), 0.1, advisory=True))
            worst_even = worst_rise = 0.0
            for st, _ in scan:
                e, r = _shape_defects(st.rho)
                worst_even, worst_rise = max(worst_even, e), max(worst_rise, r)
            radii = [d.support_radius for _, d in scan]
            coarse = _scan(p, Grid(4.0, 1024))
            sup_change = abs(max(d.height for _, d in coarse) - heights.max()) / heights.max()
            checks += [
                Check("steady", "profiles_even_rel", worst_even, 1e-8),
                Check("steady", "profiles_nonincreasing_rel", worst_rise, 1e-8),
                Check("steady", "sup_bound_refinement_rel", sup_change, 1e-2),
                Check("steady", "support_radius_max", max(radii), 2.0),
            ]
        checks += _identity_checks(tag, scan)
    return checks


def _steady_vanishing(rng) -> list[Check]:
    p = Params(m=3.0, beta=0.6, chi=1.0)
    s_values = (0.2, 0.1, 0.05)
    L = max(suggest_half_width(p.replace(s=s)) for s in s_values)
    scan = _scan(p, Grid(L, 2048), s_values)
    sup = np.array([d.height for _, d in scan])
    energy = np.array([d.energy.total for _, d in scan])
    return [
        Check("steady", "beta=0.6_sup_decreasing", float(np.all(np.diff(sup) < 0)), 1.0, "=="),
        Check("steady", "beta=0.6_energy_increasing", float(np.all(np.diff(energy) > 0)), 1.0, "=="),
    ] + _identity_checks("beta=0.6", scan)


def _steady_ball(rng) -> list[Check]:
    from scipy.optimize import minimize_scalar

    from .steady import ball_coefficients

    p = Params(m=3.0, beta=0.0, chi=1.0, s=0.25)
    c = ball_coefficients(p)
    res = minimize_scalar(lambda R: c.c1 * R**-2 - c.c3 * R**-0.5, bounds=(0.1, 10.0), method="bounded",
                          options={"xatol": 1e-12})
    return [Check("steady", "ball_radius_rel", abs(ball_radius(p) / res.x - 1), 1e-3)]


# -- evolution -----------------------------------------------------------------


def _evolution_basic(rng) -> list[Check]:
    p = Params(m=3.0, beta=0.2, chi=1.0, s=0.1)
    g = Grid(4.0, 1024)
    v = gaussian(g, -1.0, 0.3, 0.5).values + gaussian(g, 1.0, 0.3, 0.5).values
    rho0 = Density(g, 0.5 * (v + v[::-1]))
    tr = evolve(p, rho0, 0.5, [0.1, 0.2, 0.3, 0.4])
    sym = max(float(np.max(np.abs(r.values - r.values[::-1]))) for r in tr.states)
    coms = np.array([moments(r).center_of_mass for r in tr.states])
    per_step = float(np.max(np.abs(coms))) / max(tr.dt_history.size, 1) / g.dx
    slack = 1e-8 * (1 + np.abs(tr.step_energies[1:]))
    excess = float(np.max(tr.energy_increases() - slack))
    return [
        Check("evolution", "mass_drift_rel", tr.mass_drift / rho0.mass, 1e-12),
        Check("evolution", "min_density", min(float(r.values.min()) for r in tr.states), 0.0, ">="),
        Check("evolution", "even_symmetry", sym, 1e-13),
        Check("evolution", "com_drift_per_step_over_dx", per_step, 1e-10),
        Check("evolution", "energy_increase_beyond_slack", excess, 0.0),
    ]


def _evolution_attraction(rng) -> list[Check]:
    p = Params(m=3.0, beta=0.4, chi=1.0, s=0.08)
    g = Grid(9.0, 1024)
    target = fixed_point_solve(p, grid=g).rho
    tr = evolve(p, gaussian(g, 0.0, 1.0), 4.0, [1.0, 2.0])
    dist = [float(np.abs(r.values - target.values).sum() * g.dx) for r in tr.states[1:]]
    return [Check("evolution", "fig3_l1_decreasing_T=1,2,4", float(np.all(np.diff(dist) < 0)), 1.0, "==")]


def _evolution_breach(rng) -> list[Check]:
    p = Params(m=3.0, beta=0.0, chi=1.0, s=0.1)
    g = Grid(4.0, 1024)
    outs = list(np.arange(1, 201) * 0.005)
    stop = lambda t, rho: breach_amount(rho) > 1e-9  # noqa: E731
    checks = []
    for name, rho0 in (
        ("fig4", mollified_counterexample(g, 0.1, 4.0)),
        ("fig5", indicator(g, -1.5, 1.5, 0.25)),
    ):
        tr = evolve(p, rho0, 1.0, outs, stop=stop)
        t = monotonicity_breach(tr)
        checks.append(Check("evolution", f"{name}_breach_time", -1.0 if t is None else t, 0.0, ">"))
    control = discrete_steady_state(p, g).rho
    tr = evolve(p, control, 0.5, list(np.arange(1, 101) * 0.005))
    checks.append(Check("evolution", "control_breach_found", float(monotonicity_breach(tr) is not None), 0.0, "=="))
    return checks


# -- jko -----------------------------------------------------------------------


def _jko_checks(rng) -> list[Check]:
    g = Grid(4.0, 1024)
    worst_rt = 0.0
    for rho in (gaussian(g, 0.0, 0.5), indicator(g, -1.0, 1.0, 0.5), random_density(g, rng)):
        K = 256
        back = Quantile.from_density(rho, K).to_density(g)
        err = float(np.abs(back.values - rho.values).sum() * g.dx)
        worst_rt = max(worst_rt, err / (2 * (rho.mass / K + rho.values.max() * g.dx)))

    tri = 0.0
    for _ in range(10):
        a, b, c = (random_density(g, rng) for _ in range(3))
        tri = max(tri, w2_distance(a, c) - w2_distance(a, b) - w2_distance(b, c))

    examples = [
        abs(w2_distance(gaussian(g, -0.5, 0.3), gaussian(g, 0.5, 0.3)) - 1.0),
        abs(w2_distance(indicator(g, -1, 1, 0.5), indicator(g, -2, 2, 0.25)) - 1 / math.sqrt(3)),
        w2_distance(gaussian(g, 0.0, 0.5), gaussian(g, 0.0, 0.5)),
    ]

    p = Params(m=3.0, beta=0.2, chi=1.0, s=0.25)
    prev = NodeDensity.from_density(gaussian(g, 0.0, 0.5), 64)
    worst_fd = 0.0
    tau = 1e-2
    for _ in range(5):
        x = np.sort(prev.x + rng.normal(0, 0.2, prev.x.size) * prev.gaps.min())
        _, grad = jko_objective(x, prev.x, p, tau, prev.mass)
        h = 1e-4 * float(np.diff(x).min())
        fd = np.empty_like(x)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = h
            fd[k] = (jko_objective(x + e, prev.x, p, tau, prev.mass)[0]
                     - jko_objective(x - e, prev.x, p, tau, prev.mass)[0]) / (2 * h)
        worst_fd = max(worst_fd, float(np.max(np.abs(fd - grad)) / np.max(np.abs(grad))))

    rho0 = gaussian(g, 0.0, 0.5)
    run = jko_run(p, rho0, 1e-3, 8, n_particles=128)
    lhs, rhs = run.basic1()
    tele, f0 = run.telescoped()
    masses = max(abs(r.mass - rho0.mass) for r in run.states)
    com = max(abs(nd.mean()) for nd in run.nodes)
    m2 = float(np.max(np.asarray(run.second_moments) - run.second_moment_bound()))
    return [
        Check("jko", "quantile_roundtrip_ratio", worst_rt, 1.0),
        Check("jko", "w2_triangle_excess", tri, 1e-9),
        Check("jko", "w2_analytic_examples", max(examples), 1e-6),
        Check("jko", "objective_gradient_rel", worst_fd, 1e-5),
        Check("jko", "basic1_excess", float(np.max(lhs - rhs)), 1e-8),
        Check("jko", "telescoped_excess", float(np.max(tele - f0)), run.n_steps * 1e-8),
        Check("jko", "mass_change", masses, 1e-8),
        Check("jko", "center_of_mass", com, 1e-8),
        Check("jko", "second_moment_bound_excess", m2, 1e-12),
    ]


# -- cli -----------------------------------------------------------------------


def _cli_checks(rng) -> list[Check]:
    from .cli import build_config, _parser, run_config

    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            ns = _parser().parse_args(
                ["evolve", "--preset", "gaussian", "--beta", "0.2", "--s", "0.2", "--n", "256", "--T", "0.05",
                 "--n-out", "5", "--out", str(out)]
            )
            run_config(build_config(ns))
            outs.append(out)
        names = sorted(p.name for p in outs[0].glob("*.csv"))
        same = all(filecmp.cmp(outs[0] / n, outs[1] / n, shallow=False) for n in names)
        meta = json.loads((outs[0] / "meta.json").read_text())
    needed = {"params", "grid", "tolerances", "seed", "version", "timings"}
    return [
        Check("cli", "bit_identical_csv", float(same and len(names) > 1), 1.0, "=="),
        Check("cli", "meta_fields_missing", float(len(needed - set(meta))), 0.0, "=="),
    ]


CHECKS: dict[str, list[Callable]] = {
    "special": [_special_gamma, _special_constants],
    "grid": [_grid_checks],
    "riesz": [_riesz_convergence, _riesz_collapse],
    "energy": [_energy_checks],
    "steady": [_steady_limit, _steady_vanishing, _steady_ball],
    "evolution": [_evolution_basic, _evolution_attraction, _evolution_breach],
    "jko": [_jko_checks],
    "cli": [_cli_checks],
}


def _run_task(task) -> list[dict]:
    module, index, seed, mutate = task
    fn = CHECKS[module][index]
    rng = np.random.default_rng([seed, sorted(CHECKS).index(module), index])
    t0 = time.perf_counter()
    try:
        with mutation(mutate):
            results = fn(rng)
    except Exception as exc:  # a crashing check is a failing check
        results = [Check(module, f"{fn.__name__}_raised:{type(exc).__name__}: {exc}", math.nan, 0.0)]
    dt = time.perf_counter() - t0
    out = []
    for c in results:
        c.seconds = dt
        d = asdict(c)
        d["value"] = float(c.value)
        d["passed"] = bool(c.passed or c.advisory)
        d["within_threshold"] = bool(c.passed)
        out.append(d)
    return out


def run_suite(only=None, seed: int = 0, jobs: int = 1, mutate: str | None = None) -> list[dict]:
    modules = list(CHECKS) if not only else list(only)
    unknown = set(modules) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown modules {sorted(unknown)}; choose from {list(CHECKS)}")
    tasks = [(m, i, seed, mutate) for m in modules for i in range(len(CHECKS[m]))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    return [c for chunk in chunks for c in chunk]
