import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from aggdiff.energy import (
    EnergyBreakdown,
    cbar,
    free_energy,
    limit_energy,
    lower_bound_check,
    read_energy_csv,
    theta,
    write_energy_csv,
)
from aggdiff.grid import Grid, Params, dilate, gaussian, indicator, random_density
from aggdiff.riesz import build_weights
from aggdiff.special import riesz_constant, sds_constant
from aggdiff.steady import limit_energy_value, limit_profile

G = Grid(4.0, 1024)


def test_breakdown_total():
    e = EnergyBreakdown.from_terms(1.0, 0.5, -2.0)
    assert e.total == -0.5


def test_indicator_energy_closed_form():
    p = Params(m=3.0, beta=0.3, chi=1.0, s=0.25)
    R, h = 1.0, 0.5
    g = Grid(2.0, 2048)
    e = free_energy(indicator(g, -R, R, h), p, build_weights(g, p.s))
    assert e.h_m == pytest.approx(2 * R * h**p.m / (p.m - 1), rel=1e-13)
    assert e.quad == pytest.approx(p.beta * 2 * R * h * h, rel=1e-13)
    w = -0.5 * riesz_constant(1, p.s) * h * h * 2 * (2 * R) ** 1.5 / (0.5 * 1.5)
    assert e.w_s == pytest.approx(w, rel=1e-5)


@given(st.integers(0, 10_000))
def test_reflection_invariance(seed):
    p = Params(beta=0.2, s=0.15)
    W = build_weights(G, p.s)
    rho = random_density(G, np.random.default_rng(seed))
    assert free_energy(rho.reflect(), p, W).total == pytest.approx(free_energy(rho, p, W).total, rel=1e-13)


@pytest.mark.parametrize("lam", [0.8, 1.2])
def test_dilation_scaling(lam):
    p = Params(m=3.0, beta=0.3, s=0.2)
    W = build_weights(G, p.s)
    rho = gaussian(G, 0.0, 0.4)
    a, b = free_energy(rho, p, W), free_energy(dilate(rho, lam), p, W)
    assert b.h_m / a.h_m == pytest.approx(lam ** (p.m - 1), rel=1e-4)
    assert b.quad / a.quad == pytest.approx(lam, rel=1e-4)
    assert b.w_s / a.w_s == pytest.approx(lam ** (1 - 2 * p.s), rel=1e-4)


def test_mismatched_weights():
    p = Params(s=0.2)
    with pytest.raises(ValueError):
        free_energy(gaussian(G), p, build_weights(G, 0.1))
    with pytest.raises(ValueError):
        free_energy(gaussian(G), p, build_weights(Grid(4.0, 512), 0.2))


def test_limit_energy_of_limit_profile():
    for beta in (0.0, 0.2):
        p = Params(beta=beta)
        g = Grid(4.0, 3000)
        assert limit_energy(limit_profile(p, g), p) == pytest.approx(limit_energy_value(p), rel=1e-3)


@pytest.mark.parametrize("m,s", [(3.0, 0.25), (4.0, 0.1), (2.5, 0.4)])
def test_cbar_is_optimal_young_constant(m, s):
    p = Params(m=m, s=s, chi=1.3, mass=1.5)
    th = theta(p)
    A = 0.5 * p.chi * sds_constant(1, s) * p.mass ** (2 - 2 * th)
    res = minimize_scalar(lambda y: -(A * y ** (2 * th) - y**m / (2 * (m - 1))), bounds=(1e-8, 50), method="bounded",
                          options={"xatol": 1e-12})
    assert cbar(p) == pytest.approx(-res.fun, rel=1e-8)


def test_theta_value():
    assert theta(Params(m=3.0, s=0.25)) == pytest.approx(0.375)


@given(st.integers(0, 10_000), st.floats(0.02, 0.45), st.floats(0.0, 1.0))
def test_lower_bound_on_random_densities(seed, s, beta):
    p = Params(s=s, beta=beta)
    g = Grid(4.0, 256)
    rep = lower_bound_check(random_density(g, np.random.default_rng(seed)), p, build_weights(g, s))
    assert rep.satisfied
    assert rep.lhs <= rep.rhs and rep.hls_lhs <= rep.hls_rhs


def test_energy_csv_roundtrip(tmp_path):
    es = [EnergyBreakdown.from_terms(0.1 * k, 0.2, -0.3 * k) for k in range(4)]
    path = tmp_path / "energy.csv"
    write_energy_csv(path, [0.0, 0.5, 1.0, 1.5], es)
    t, back = read_energy_csv(path)
    assert np.array_equal(t, [0.0, 0.5, 1.0, 1.5])
    assert back == es
