import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aggdiff.energy import free_energy
from aggdiff.evolution import (
    MIN_WINDOW_SAMPLES,
    breach_amount,
    bump_window,
    cfl_dt,
    evolve,
    local_limit_evolve,
    monotonicity_breach,
    stationary_defect,
    step,
    velocity_potential,
    weak_residual,
    zero_window,
)
from aggdiff.grid import Density, Grid, Params, gaussian, indicator, moments, random_density
from aggdiff.riesz import build_weights, gaussian_test_function
from aggdiff.steady import fixed_point_solve

P = Params(m=3.0, beta=0.2, chi=1.0, s=0.2)
G = Grid(4.0, 256)
W = build_weights(G, P.s)


@given(st.integers(0, 10_000), st.floats(0.1, 1.0))
def test_single_step_positive_and_conservative(seed, frac):
    rho = random_density(G, np.random.default_rng(seed))
    dt = frac * cfl_dt(rho, P, W)
    new = step(rho, P, W, dt)
    assert new.values.min() >= 0
    assert abs(new.mass - rho.mass) <= 1e-12 * rho.mass


def test_step_rejects_large_dt():
    rho = gaussian(G, 0.0, 0.5)
    with pytest.raises(ValueError):
        step(rho, P, W, 2 * cfl_dt(rho, P, W))
    with pytest.raises(ValueError):
        step(rho, P, W, 0.0)


def test_step_decreases_energy():
    rho = gaussian(G, 0.0, 0.5)
    e0 = free_energy(rho, P, W).total
    e1 = free_energy(step(rho, P, W, 0.9 * cfl_dt(rho, P, W)), P, W).total
    assert e1 < e0


def test_velocity_field_shape():
    vel = velocity_potential(gaussian(G), P, W)
    assert vel.u.shape == (G.n_cells - 1,)
    assert vel.psi.shape == (G.n_cells,)


@pytest.fixture(scope="module")
def two_bump_run():
    v = gaussian(G, -1.0, 0.3, 0.5).values + gaussian(G, 1.0, 0.3, 0.5).values
    rho0 = Density(G, 0.5 * (v + v[::-1]))
    return rho0, evolve(P, rho0, 0.3, [0.1, 0.2])


def test_output_times_are_hit(two_bump_run):
    _, tr = two_bump_run
    assert tr.times == [0.0, 0.1, 0.2, 0.3]
    assert len(tr.states) == len(tr.energy_log) == 4
    assert tr.final is tr.states[-1]


def test_mass_positivity_symmetry(two_bump_run):
    rho0, tr = two_bump_run
    assert tr.mass_drift <= 1e-12 * rho0.mass
    for r in tr.states:
        assert r.values.min() >= 0
        assert np.max(np.abs(r.values - r.values[::-1])) <= 1e-13
        assert abs(moments(r).center_of_mass) <= 1e-10 * G.dx


def test_energy_nonincreasing(two_bump_run):
    _, tr = two_bump_run
    slack = 1e-8 * (1 + np.abs(tr.step_energies[1:]))
    assert np.all(tr.energy_increases() <= slack)
    totals = [e.total for e in tr.energy_log]
    assert np.all(np.diff(totals) < 0)


def test_output_time_validation():
    with pytest.raises(ValueError):
        evolve(P, gaussian(G), 0.0)
    with pytest.raises(ValueError):
        evolve(P, gaussian(G), 1.0, [2.0])


def test_step_budget():
    with pytest.raises(RuntimeError):
        evolve(P, gaussian(G), 1.0, max_steps=3)


def test_stop_callback():
    tr = evolve(P, gaussian(G), 1.0, [0.01, 0.02, 0.03], stop=lambda t, rho: t >= 0.02)
    assert tr.times[-1] == 0.02


def test_local_limit_regime():
    with pytest.raises(ValueError):
        local_limit_evolve(Params(beta=0.2), gaussian(G), 0.1)
    p = Params(beta=0.6)
    rho0 = gaussian(G, 0.0, 0.5)
    tr = local_limit_evolve(p, rho0, 0.2, [0.1])
    assert tr.mass_drift <= 1e-12
    totals = [e.total for e in tr.energy_log]
    assert np.all(np.diff(totals) < 0)
    # the nonlocal flow at small s stays close to the local one
    g = G
    near = evolve(p.replace(s=0.02), rho0, 0.2).final
    far = evolve(p.replace(s=0.2), rho0, 0.2).final
    d = lambda a: float(np.sqrt(((a.values - tr.final.values) ** 2).sum() * g.dx))  # noqa: E731
    assert d(near) < d(far)


def test_bump_window():
    w = bump_window(0.2, 0.6)
    t = np.linspace(0, 1, 2001)
    f = w.f(t)
    assert f.max() == pytest.approx(1.0, abs=1e-5)
    assert np.all(f[(t <= 0.2) | (t >= 0.6)] == 0)
    fd = np.gradient(f, t)
    assert np.max(np.abs(fd - w.d1(t))) < 1e-2 * np.max(np.abs(w.d1(t)))
    with pytest.raises(ValueError):
        bump_window(0.5, 0.5)


def test_weak_residual_guards():
    tr = evolve(P, gaussian(G), 0.01, [0.005])
    phi = gaussian_test_function(0.3, 0.7)
    assert weak_residual(tr, phi, zero_window(), P) == 0.0
    with pytest.raises(ValueError):
        weak_residual(tr, phi, bump_window(0.0, 0.01), P)


def test_weak_residual_refines():
    p = Params(m=3.0, beta=0.2, s=0.25)
    phi = gaussian_test_function(0.3, 0.7)
    eta = bump_window(0.02, 0.08)
    outs = list(np.linspace(0, 0.1, 101)[1:])
    res = []
    for n in (128, 256):
        g = Grid(4.0, n)
        res.append(weak_residual(evolve(p, gaussian(g, 0.0, 0.5), 0.1, outs), phi, eta, p))
    assert res[1] < res[0] / 1.5
    assert MIN_WINDOW_SAMPLES >= 2


def test_stationary_defect():
    p = Params(m=3.0, beta=0.0, s=0.1)
    g = Grid(4.0, 512)
    Wg = build_weights(g, p.s)
    phi = gaussian_test_function(0.3, 0.7)
    eq = fixed_point_solve(p, grid=g).rho
    assert abs(stationary_defect(eq, phi, p, Wg)) < 1e-2 * abs(stationary_defect(gaussian(g, 0.0, 1.0), phi, p, Wg))


def test_breach_detection():
    g = Grid(4.0, 256)
    assert breach_amount(gaussian(g)) == 0.0
    v = np.zeros(g.n_cells)
    v[140:150] = 1.0
    assert breach_amount(Density(g, v)) == 1.0
    p = Params(m=3.0, beta=0.0, s=0.1)
    tr = evolve(p, indicator(g, -1.5, 1.5, 0.25), 0.05, [0.01, 0.02, 0.03, 0.04])
    t = monotonicity_breach(tr)
    assert t is not None and 0 < t <= 0.05
    assert monotonicity_breach(evolve(p, gaussian(g, 0.0, 0.5), 0.02)) is None
