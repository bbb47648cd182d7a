"""Exact cell quadrature for the 1D Riesz kernel ``K_s(r) = c_{1,s} |r|^{2s-1}``.

``w_ij = c_{1,s} * integral over cell j of |x_i - y|^{2s-1} dy`` is evaluated
from the closed-form antiderivative, including the singular diagonal cell.
On a uniform grid ``w_ij`` only depends on ``|i - j|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import toeplitz

from .grid import Density, Grid
from .special import riesz_constant


_FFT_MIN = 512


@dataclass(frozen=True, eq=False)
class KernelWeights:
    grid: Grid
    s: float
    eps: float
    row: np.ndarray
    """``row[k]`` is the weight between cells ``k`` apart."""

    @cached_property
    def matrix(self) -> np.ndarray:
        w = toeplitz(self.row)
        w.flags.writeable = False
        return w

    @property
    def c(self) -> float:
        return riesz_constant(1, self.s)

    @cached_property
    def _spectrum(self) -> np.ndarray:
        # symmetric Toeplitz -> circulant of length 2n
        circ = np.concatenate([self.row, [0.0], self.row[:0:-1]])
        return np.fft.rfft(circ)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``w @ v``; through the FFT once the grid is large enough to pay off."""
        n = self.row.size
        if n < _FFT_MIN:
            return self.matrix @ v
        return np.fft.irfft(self._spectrum * np.fft.rfft(v, 2 * n), 2 * n)[:n]


def _antiderivative(r: np.ndarray, s: float, eps: float) -> np.ndarray:
    # odd antiderivative of |r|^{2s-1}, or of its truncation at radius eps
    a = np.abs(r)
    if eps <= 0:
        return np.sign(r) * a ** (2 * s) / (2 * s)
    inner = eps ** (2 * s - 1) * a
    outer = eps ** (2 * s) + (a ** (2 * s) - eps ** (2 * s)) / (2 * s)
    return np.sign(r) * np.where(a <= eps, inner, outer)


def _exact_row(n: int, dx: float, s: float) -> np.ndarray:
    k = np.arange(n, dtype=float)
    row = np.empty(n)
    row[0] = 2.0 * (dx / 2) ** (2 * s) / (2 * s)
    # (k+1/2)^{2s} - (k-1/2)^{2s} without cancellation for large k
    lo = k[1:] - 0.5
    row[1:] = lo ** (2 * s) * np.expm1(2 * s * np.log1p(1.0 / lo)) * dx ** (2 * s) / (2 * s)
    return row


@lru_cache(maxsize=32)
def build_weights(grid: Grid, s: float, eps: float = 0.0) -> KernelWeights:
    """Cell-integrated Riesz weights, optionally with the kernel truncated at ``eps``."""
    if not 0 < s < 0.5:
        raise ValueError(f"s must lie in (0, 1/2) for d = 1, got {s}")
    if eps < 0:
        raise ValueError(f"truncation radius must be nonnegative, got {eps}")
    n, dx = grid.n_cells, grid.dx
    row = _exact_row(n, dx, s)
    if eps > 0:
        k = np.arange(n, dtype=float)
        near = (k - 0.5) * dx < eps
        near[0] = True
        kn = k[near]
        row[near] = _antiderivative((kn + 0.5) * dx, s, eps) - _antiderivative((kn - 0.5) * dx, s, eps)
    row *= riesz_constant(1, s)
    row.flags.writeable = False
    return KernelWeights(grid, float(s), float(eps), row)


def _check(rho: Density, W: KernelWeights) -> None:
    if rho.grid != W.grid:
        raise ValueError("density and kernel weights live on different grids")


def convolve(rho: Density, W: KernelWeights) -> np.ndarray:
    """``(K_s * rho)(x_i)``, exact for piecewise-constant ``rho``."""
    _check(rho, W)
    return W.apply(rho.values)


def interaction_energy(rho: Density, W: KernelWeights, chi: float) -> float:
    """``-chi/2 * double integral of K_s(x-y) rho(x) rho(y)``.

    The inner integral is exact (it lives in ``w``), the outer one is a
    midpoint sum, hence a single factor ``dx``.
    """
    _check(rho, W)
    v = rho.values
    return float(-0.5 * chi * rho.grid.dx * (v @ W.apply(v)))


@dataclass(frozen=True)
class TestFunction:
    """Smooth test function given with its analytic derivatives."""

    f: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]

    __test__ = False  # not a pytest class


def gaussian_test_function(center: float = 0.0, width: float = 1.0, amplitude: float = 1.0) -> TestFunction:
    def f(x):
        return amplitude * np.exp(-0.5 * ((x - center) / width) ** 2)

    def d1(x):
        return -(x - center) / width**2 * f(x)

    def d2(x):
        z = (x - center) / width
        return (z * z - 1.0) / width**2 * f(x)

    return TestFunction(f, d1, d2)


def symmetric_form(rho: Density, phi: TestFunction, W: KernelWeights) -> float:
    """``(1-2s) c_{1,s} iint (phi'(x)-phi'(y))(x-y)|x-y|^{2s-3} rho(x) rho(y)``.

    Writing the integrand as the divided difference of ``phi'`` times
    ``|x-y|^{2s-1}``, the singular factor is integrated exactly through the
    kernel weights; on the diagonal the divided difference is replaced by its
    Taylor value ``phi''(x_i)`` (the odd first-order term integrates to zero).
    """
    _check(rho, W)
    x = rho.grid.centers
    g = phi.d1(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (g[:, None] - g[None, :]) / diff
    np.fill_diagonal(D, phi.d2(x))
    v = rho.values
    return float((1 - 2 * W.s) * rho.grid.dx * (v @ ((D * W.matrix) @ v)))


def symmetric_form_via_potential(rho: Density, phi: TestFunction, W: KernelWeights) -> float:
    """Same quantity as :func:`symmetric_form` through ``-2 int rho phi' (K_s*rho)'``."""
    pot = convolve(rho, W)
    dpot = np.gradient(pot, rho.grid.dx)
    return float(-2.0 * (rho.values * phi.d1(rho.grid.centers) * dpot).sum() * rho.grid.dx)


def truncation_l1_bound(rho: Density, s: float, eps: float) -> float:
    """``||rho||_1 * c_{1,s} * int_{|r|<=eps} (|r|^{2s-1} - eps^{2s-1}) dr``."""
    c = riesz_constant(1, s)
    return rho.mass * c * 2.0 * eps ** (2 * s) * (1.0 / (2 * s) - 1.0)
