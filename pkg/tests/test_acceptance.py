"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Runtime limits are asserted alongside the numerical targets.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from aggdiff.evolution import breach_amount, evolve, local_limit_evolve, monotonicity_breach
from aggdiff.grid import Density, Grid, Params, gaussian, indicator, lp_norm, mollified_counterexample
from aggdiff.jko import jko_objective, jko_run, w2_distance
from aggdiff.nodes import NodeDensity
from aggdiff.riesz import build_weights, gaussian_test_function, symmetric_form
from aggdiff.special import gamma, hls_constant, riesz_constant, sds_constant
from aggdiff.steady import (
    ball_coefficients,
    ball_radius,
    discrete_steady_state,
    fixed_point_solve,
    limit_profile,
    steady_diagnostics,
    suggest_half_width,
)
from aggdiff.evolution import bump_window, weak_residual

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(tag, detail, ok):
        with capsys.disabled():
            print(f"\n[{tag}] {detail} {'PASS' if ok else 'FAIL'}")
        return ok

    return emit


def test_c1_constants(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    c = riesz_constant(1, 0.25)
    s = rng.uniform(1e-3, 0.5 - 1e-3, 100)
    sds_rel = max(abs(sds_constant(1, t) / (riesz_constant(1, t) * hls_constant(1, t)) - 1) for t in s)
    x = rng.uniform(1e-3, 1 - 1e-3, 100)
    refl = max(abs(gamma(t) * gamma(1 - t) * math.sin(math.pi * t) / math.pi - 1) for t in x)
    dt = time.perf_counter() - t0
    ok = abs(c - 0.3989422804) <= 1e-9 and sds_rel <= 1e-11 and refl <= 1e-10 and dt < 1.0
    report("C1", f"c_1,1/4={c:.10f} S-identity rel={sds_rel:.1e} reflection={refl:.1e} t={dt:.2f}s", ok)
    assert ok


SCAN = (0.2, 0.1, 0.05, 0.02)


@pytest.fixture(scope="module")
def limit_scans():
    out = {}
    t0 = time.perf_counter()
    g = Grid(4.0, 2048)
    for beta in (0.0, 0.2):
        rows = []
        for s in SCAN:
            p = Params(m=3.0, beta=beta, chi=1.0, s=s, mass=1.0)
            st = fixed_point_solve(p, grid=g)
            rows.append((st, steady_diagnostics(st.rho, p, build_weights(g, s))))
        out[beta] = rows
    out["seconds"] = time.perf_counter() - t0
    out["grid"] = g
    return out


@pytest.mark.parametrize("beta,target", [(0.0, 0.5), (0.2, 0.3)])
def test_c2_limit_profile(limit_scans, beta, target, report):
    g = limit_scans["grid"]
    rows = limit_scans[beta]
    lim = limit_profile(Params(m=3.0, beta=beta), g)
    heights = np.array([d.height for _, d in rows])
    l3 = np.array([lp_norm(Density(g, np.abs(st.rho.values - lim.values)), 3) for st, _ in rows])
    gap = np.abs(heights - target)
    toward = bool(np.all(np.diff(gap) < 0))
    if beta == 0.0:
        toward = toward and bool(np.all(np.diff(heights) > 0))
    ok = (
        toward
        and gap[-1] <= 0.05
        and bool(np.all(np.diff(l3) < 0))
        and limit_scans["seconds"] < 120
        and all(st.converged for st, _ in rows)
    )
    report(
        "C2",
        f"beta={beta} heights={np.round(heights, 5).tolist()} |h-{target}|={gap[-1]:.4f} "
        f"L3={np.round(l3, 4).tolist()} scans t={limit_scans['seconds']:.1f}s",
        ok,
    )
    assert ok


def test_c3_vanishing(report):
    t0 = time.perf_counter()
    p = Params(m=3.0, beta=0.6, chi=1.0)
    s_values = (0.2, 0.1, 0.05)
    L = max(suggest_half_width(p.replace(s=s)) for s in s_values)
    g = Grid(L, 2048)
    sup, energy = [], []
    for s in s_values:
        q = p.replace(s=s)
        st = fixed_point_solve(q, grid=g)
        d = steady_diagnostics(st.rho, q, build_weights(g, s))
        sup.append(d.height)
        energy.append(d.energy.total)
    dt = time.perf_counter() - t0
    ok = (
        bool(np.all(np.diff(sup) < 0))
        and bool(np.all(np.diff(energy) > 0))
        and max(energy) < 0
        and dt < 120
    )
    report("C3", f"sup={np.round(sup, 5).tolist()} F={[f'{e:.3e}' for e in energy]} t={dt:.1f}s", ok)
    assert ok


def test_c4_identities(limit_scans, report):
    diags = [d for beta in (0.0, 0.2) for _, d in limit_scans[beta]]
    vir = max(d.virial_relative for d in diags)
    cs = max(d.cs_relative for d in diags)
    fmax = max(d.energy.total for d in diags)
    ok = vir <= 1e-3 and cs <= 1e-3 and fmax < 0
    report("C4", f"virial rel max={vir:.2e} C_s rel max={cs:.2e} max F={fmax:.4f}", ok)
    assert ok


def test_c5_ball_radius(report):
    t0 = time.perf_counter()
    p = Params(m=3.0, beta=0.0, chi=1.0, s=0.25, mass=1.0)
    # independent coefficients for the uniform ball of radius R in d = 1
    C1 = 1 / 8
    C3 = riesz_constant(1, 0.25) * 2 ** -0.5 / (0.5 * 1.5)
    b = ball_coefficients(p)
    res = minimize_scalar(lambda R: C1 * R**-2 - C3 * R**-0.5, bounds=(0.1, 10), method="bounded",
                          options={"xatol": 1e-12})
    R = ball_radius(p, omega=2.0)
    dt = time.perf_counter() - t0
    rel = abs(R / res.x - 1)
    ok = rel <= 1e-3 and abs(R - 1.209) < 1e-3 and math.isclose(b.c1, C1) and math.isclose(b.c3, C3) and dt < 1
    report("C5", f"closed form R={R:.6f} numerical R={res.x:.6f} rel={rel:.1e} t={dt:.3f}s", ok)
    assert ok


def test_c6_evolution(report):
    t0 = time.perf_counter()
    p = Params(m=3.0, beta=0.2, chi=1.0, s=0.1)
    g = Grid(4.0, 1024)
    v = gaussian(g, -1.0, 0.3, 0.5).values + gaussian(g, 1.0, 0.3, 0.5).values
    rho0 = Density(g, v)
    tr = evolve(p, rho0, 30.0, [10.0, 20.0])
    target = fixed_point_solve(p, grid=g).rho
    l1 = float(np.abs(tr.final.values - target.values).sum() * g.dx)
    dt = time.perf_counter() - t0
    excess = float(np.max(tr.energy_increases() - 1e-8 * (1 + np.abs(tr.step_energies[1:]))))
    ok = tr.mass_drift <= 1e-12 * rho0.mass and excess <= 0 and l1 <= 0.02 and dt < 300
    report(
        "C6",
        f"mass drift={tr.mass_drift:.1e} max dF-slack={excess:.1e} L1(T=30)={l1:.4f} "
        f"steps={tr.dt_history.size} t={dt:.0f}s",
        ok,
    )
    assert ok


def test_c7_breach(report):
    t0 = time.perf_counter()
    p = Params(m=3.0, beta=0.0, chi=1.0, s=0.1)
    g = Grid(4.0, 1024)
    outs = list(np.arange(1, 201) * 0.005)
    stop = lambda t, rho: breach_amount(rho) > 1e-9  # noqa: E731
    times = {}
    for name, rho0 in (("fig4", mollified_counterexample(g, 0.1, 4.0)), ("fig5", indicator(g, -1.5, 1.5, 0.25))):
        times[name] = monotonicity_breach(evolve(p, rho0, 1.0, outs, stop=stop))
    control = discrete_steady_state(p, g).rho
    times["control"] = monotonicity_breach(evolve(p, control, 1.0, outs))
    dt = time.perf_counter() - t0
    ok = (
        all(times[k] is not None and 0 < times[k] <= 1 for k in ("fig4", "fig5"))
        and times["control"] is None
        and dt < 300
    )
    report("C7", f"breach times {times} t={dt:.0f}s", ok)
    assert ok


def test_c8_kernel_collapse(report):
    t0 = time.perf_counter()
    g = Grid(4.0, 2048)
    rho = gaussian(g, 0.0, 0.5)
    phi = gaussian_test_function(0.3, 0.7)
    local = float((rho.values**2 * phi.d2(g.centers)).sum() * g.dx)
    errs = [abs(symmetric_form(rho, phi, build_weights(g, s)) - local) for s in (0.1, 0.05, 0.02)]
    dt = time.perf_counter() - t0
    ok = errs[0] > errs[1] > errs[2] and dt < 60
    report("C8", f"|I_s - int rho^2 phi''| = {[f'{e:.3e}' for e in errs]} t={dt:.1f}s", ok)
    assert ok


def test_c9_evolution_limit(report):
    t0 = time.perf_counter()
    p = Params(m=3.0, beta=0.6, chi=1.0)
    g = Grid(4.0, 1024)
    rho0 = gaussian(g, 0.0, 0.5)
    ref = local_limit_evolve(p, rho0, 0.5).final
    dists = []
    for s in (0.1, 0.05, 0.02):
        fin = evolve(p.replace(s=s), rho0, 0.5).final
        dists.append(float(np.sqrt(((fin.values - ref.values) ** 2).sum() * g.dx)))
    dt = time.perf_counter() - t0
    ok = dists[0] > dists[1] > dists[2] and dt < 300
    report("C9", f"L2 to local limit at T=0.5: {[f'{d:.4f}' for d in dists]} t={dt:.0f}s", ok)
    assert ok


def test_c10_jko(report):
    t0 = time.perf_counter()
    p = Params(m=3.0, beta=0.2, chi=1.0, s=0.25)
    g = Grid(4.0, 1024)
    run = jko_run(p, gaussian(g, 0.0, 0.5), 1e-3, 50, n_particles=256)
    lhs, rhs = run.basic1()
    basic1 = float(np.max(lhs - rhs))

    examples = [
        abs(w2_distance(gaussian(g, -0.5, 0.3), gaussian(g, 0.5, 0.3)) - 1.0),
        abs(w2_distance(indicator(g, -1, 1, 0.5), indicator(g, -2, 2, 0.25)) - 1 / math.sqrt(3)),
        w2_distance(gaussian(g, 0.0, 0.5), gaussian(g, 0.0, 0.5)),
    ]

    rng = np.random.default_rng(10)
    prev = NodeDensity.from_density(gaussian(g, 0.0, 0.5), 64)
    tau = 1e-3
    worst = 0.0
    for _ in range(20):
        x = np.sort(prev.x + rng.normal(0, 0.3, prev.x.size) * prev.gaps.min())
        _, grad = jko_objective(x, prev.x, p, tau, prev.mass)
        h = 1e-4 * float(np.diff(x).min())
        fd = np.array([
            (jko_objective(x + h * e, prev.x, p, tau, prev.mass)[0]
             - jko_objective(x - h * e, prev.x, p, tau, prev.mass)[0]) / (2 * h)
            for e in np.eye(x.size)
        ])
        worst = max(worst, float(np.max(np.abs(fd - grad)) / np.max(np.abs(grad))))
    dt = time.perf_counter() - t0
    ok = basic1 <= 1e-8 and max(examples) <= 1e-6 and worst <= 1e-5 and dt < 300
    report(
        "C10",
        f"max(basic1 lhs-rhs)={basic1:.2e} w2 examples err={max(examples):.1e} "
        f"gradient rel err={worst:.1e} t={dt:.0f}s",
        ok,
    )
    assert ok


def test_c11_weak_form(report):
    t0 = time.perf_counter()
    p = Params(m=3.0, beta=0.2, chi=1.0, s=0.25)
    phi = gaussian_test_function(0.3, 0.7)
    eta = bump_window(0.02, 0.08)
    outs = list(np.linspace(0.0, 0.1, 201)[1:])
    res = []
    for n in (256, 512, 1024):
        g = Grid(4.0, n)
        res.append(weak_residual(evolve(p, gaussian(g, 0.0, 0.5), 0.1, outs), phi, eta, p))
    ratios = [res[0] / res[1], res[1] / res[2]]
    dt = time.perf_counter() - t0
    ok = min(ratios) >= 1.5 and dt < 180
    report("C11", f"residuals={[f'{r:.2e}' for r in res]} ratios={[f'{r:.2f}' for r in ratios]} t={dt:.0f}s", ok)
    assert ok
