import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from aggdiff.grid import Density, Grid, gaussian, indicator, random_density
from aggdiff.riesz import (
    build_weights,
    convolve,
    gaussian_test_function,
    interaction_energy,
    symmetric_form,
    symmetric_form_via_potential,
    truncation_l1_bound,
)
from aggdiff.special import riesz_constant


@pytest.mark.parametrize("s", [0.05, 0.25, 0.45])
def test_weights_match_quadrature(s):
    g = Grid(2.0, 16)
    W = build_weights(g, s)
    c, dx = riesz_constant(1, s), g.dx
    # algebraic endpoint weight handles the |r|^{2s-1} singularity at 0
    w0 = 2 * c * integrate.quad(lambda r: 1.0, 0, dx / 2, weight="alg", wvar=(2 * s - 1, 0))[0]
    assert W.row[0] == pytest.approx(w0, rel=1e-12)
    for k in (1, 2, 7, 15):
        wk = c * integrate.quad(lambda r: r ** (2 * s - 1), (k - 0.5) * dx, (k + 0.5) * dx, epsabs=0, epsrel=1e-13)[0]
        assert W.row[k] == pytest.approx(wk, rel=1e-11)


def test_weights_symmetric_toeplitz():
    W = build_weights(Grid(4.0, 64), 0.2)
    assert np.array_equal(W.matrix, W.matrix.T)
    assert np.all(np.diff(W.row) < 0)


def test_fft_matches_matrix(rng):
    g = Grid(4.0, 1024)
    W = build_weights(g, 0.1)
    v = random_density(g, rng).values
    direct = W.matrix @ v
    assert np.max(np.abs(W.apply(v) - direct)) <= 1e-13 * np.max(np.abs(direct))


@pytest.mark.parametrize("s", [0.1, 0.3])
def test_convolve_exact_for_aligned_indicator(s):
    g = Grid(2.0, 64)
    a, b = -1.0, 0.5  # both on cell edges
    rho = indicator(g, a, b, 1.0)
    x = g.centers

    def prim(y):  # antiderivative of |x - y|^{2s-1} in y, up to sign
        return np.sign(x - y) * np.abs(x - y) ** (2 * s) / (2 * s)

    exact = riesz_constant(1, s) * (prim(a) - prim(b))
    assert np.max(np.abs(convolve(rho, build_weights(g, s)) - exact)) < 1e-12


def test_convolve_gaussian_matches_quad():
    s = 0.25
    g = Grid(6.0, 2048)
    rho = gaussian(g, 0.0, 0.5)
    pot = convolve(rho, build_weights(g, s))
    c = riesz_constant(1, s)
    dens = lambda y: math.exp(-2 * y * y) / math.sqrt(math.pi / 2)  # noqa: E731
    for i in (1024, 1100, 1400):
        x = g.centers[i]
        left = integrate.quad(dens, -6, x, weight="alg", wvar=(0, 2 * s - 1))[0]
        right = integrate.quad(dens, x, 6, weight="alg", wvar=(2 * s - 1, 0))[0]
        assert pot[i] == pytest.approx(c * (left + right), rel=1e-5)


def test_convolution_order():
    s = 0.25
    exact = riesz_constant(1, s) / s
    errs = []
    for n in (64, 128, 256):
        g = Grid(2.0, n)
        rho = Density(g, (np.abs(g.centers) < 1).astype(float))
        pot = convolve(rho, build_weights(g, s))
        errs.append(abs(0.5 * (pot[n // 2 - 1] + pot[n // 2]) - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.0)


def test_interaction_energy_indicator():
    s, chi, R, h = 0.25, 1.0, 1.0, 0.5
    # iint_{[0,a]^2} |x-y|^{2s-1} = 2 a^{2s+1} / (2s (2s+1))
    exact = -0.5 * chi * riesz_constant(1, s) * h * h * 2 * (2 * R) ** (2 * s + 1) / (2 * s * (2 * s + 1))
    # inner integral exact, outer one a midpoint sum
    errs = []
    for n in (1024, 2048):
        g = Grid(2.0, n)
        errs.append(abs(interaction_energy(indicator(g, -R, R, h), build_weights(g, s), chi) - exact))
    assert errs[1] < errs[0] and errs[1] <= 1e-5 * abs(exact)


def test_interaction_grid_mismatch():
    with pytest.raises(ValueError):
        convolve(gaussian(Grid(4.0, 64)), build_weights(Grid(4.0, 32), 0.2))


@given(st.integers(0, 10_000), st.floats(-0.5, 0.5), st.floats(0.4, 1.0))
def test_symmetric_form_reflection(seed, c, w):
    g = Grid(4.0, 128)
    W = build_weights(g, 0.2)
    rho = random_density(g, np.random.default_rng(seed))
    a = symmetric_form(rho, gaussian_test_function(c, w), W)
    b = symmetric_form(rho.reflect(), gaussian_test_function(-c, w), W)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("s", [0.1, 0.25])
def test_symmetric_form_two_ways(s):
    g = Grid(4.0, 2048)
    rho = gaussian(g, 0.2, 0.5)
    phi = gaussian_test_function(0.3, 0.7)
    W = build_weights(g, s)
    assert symmetric_form(rho, phi, W) == pytest.approx(symmetric_form_via_potential(rho, phi, W), rel=1e-4)


def test_kernel_collapse():
    g = Grid(4.0, 2048)
    rho = gaussian(g, 0.0, 0.5)
    phi = gaussian_test_function(0.3, 0.7)
    local = float((rho.values**2 * phi.d2(g.centers)).sum() * g.dx)
    errs = [abs(symmetric_form(rho, phi, build_weights(g, s)) - local) for s in (0.1, 0.05, 0.02)]
    assert errs[0] > errs[1] > errs[2]


def test_truncation_bound():
    g = Grid(4.0, 1024)
    rho = gaussian(g, 0.0, 0.5)
    s = 0.25
    exact = convolve(rho, build_weights(g, s))
    prev = math.inf
    for eps in (g.dx, g.dx / 2, g.dx / 4):
        diff = float(np.abs(convolve(rho, build_weights(g, s, eps)) - exact).sum() * g.dx)
        bound = truncation_l1_bound(rho, s, eps)
        assert diff <= bound * (1 + 1e-9)
        assert bound < prev
        prev = bound


def test_build_weights_validation():
    with pytest.raises(ValueError):
        build_weights(Grid(1.0, 8), 0.5)
    with pytest.raises(ValueError):
        build_weights(Grid(1.0, 8), 0.2, -1.0)
