"""Uniform 1D mesh, cell-averaged densities and the model parameters."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from .special import unit_sphere_area


@dataclass(frozen=True)
class Grid:
    """Cells of width ``dx = 2L/n`` covering ``[-L, L]``."""

    half_width: float
    n_cells: int

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.n_cells < 2 or self.n_cells % 2:
            raise ValueError(f"n_cells must be a positive even integer, got {self.n_cells}")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n_cells

    @cached_property
    def centers(self) -> np.ndarray:
        x = -self.half_width + (np.arange(self.n_cells) + 0.5) * self.dx
        x.flags.writeable = False
        return x

    @cached_property
    def nodes(self) -> np.ndarray:
        x = -self.half_width + np.arange(self.n_cells + 1) * self.dx
        x.flags.writeable = False
        return x

    def zeros(self) -> "Density":
        return Density(self, np.zeros(self.n_cells))


@dataclass(frozen=True, eq=False)
class Density:
    """Nonnegative cell averages (mass per unit length) on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_cells,):
            raise ValueError(f"expected {self.grid.n_cells} cell values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        if np.any(v < 0):
            raise ValueError(f"density must be nonnegative (min = {v.min():.3e})")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.dx)

    def __mul__(self, k: float) -> "Density":
        return Density(self.grid, self.values * k)

    __rmul__ = __mul__

    def reflect(self) -> "Density":
        return Density(self.grid, self.values[::-1])


@dataclass(frozen=True)
class Params:
    """Model parameters for ``rho_t = (rho^m)'' + beta (rho^2)'' - chi (rho (K_s*rho)')'``."""

    m: float = 3.0
    beta: float = 0.0
    chi: float = 1.0
    s: float = 0.25
    mass: float = 1.0
    d: int = 1

    def __post_init__(self) -> None:
        problems = []
        if self.d != 1:
            problems.append(f"only d = 1 is supported (got d={self.d})")
        if not self.m > 2:
            problems.append(f"m must exceed 2 (got {self.m})")
        if not self.beta >= 0:
            problems.append(f"beta must be nonnegative (got {self.beta})")
        if not self.chi > 0:
            problems.append(f"chi must be positive (got {self.chi})")
        if not 0 < self.s < self.d / 2:
            problems.append(f"s must lie in (0, d/2) (got {self.s})")
        if not self.mass > 0:
            problems.append(f"mass must be positive (got {self.mass})")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def gamma(self) -> float:
        """Net quadratic attraction ``chi/2 - beta`` of the local limit."""
        return self.chi / 2.0 - self.beta

    def replace(self, **changes) -> "Params":
        kw = dict(m=self.m, beta=self.beta, chi=self.chi, s=self.s, mass=self.mass, d=self.d)
        kw.update(changes)
        return Params(**kw)


@dataclass(frozen=True)
class Moments:
    mass: float
    center_of_mass: float
    second_moment: float
    zero_mass: bool = False


def moments(rho: Density) -> Moments:
    x, dx, v = rho.grid.centers, rho.grid.dx, rho.values
    mass = float(v.sum() * dx)
    second = float((x * x * v).sum() * dx)
    if mass == 0.0:
        return Moments(0.0, 0.0, second, zero_mass=True)
    return Moments(mass, float((x * v).sum() * dx) / mass, second)


def lp_norm(rho: Density, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float((np.abs(rho.values) ** p).sum() * rho.grid.dx) ** (1.0 / p)


def _cdf_at(rho: Density, points: np.ndarray) -> np.ndarray:
    # exact cumulative mass of the piecewise-constant density
    g = rho.grid
    cdf = np.concatenate(([0.0], np.cumsum(rho.values) * g.dx))
    return np.interp(points, g.nodes, cdf)


def dilate(rho: Density, lam: float, *, overflow_tol: float = 1e-10) -> Density:
    """Mass-preserving dilation ``lam * rho(lam x)``.

    The piecewise-constant source is integrated exactly over each target
    cell, so mass is preserved to roundoff unless part of the support would
    leave the grid, which raises ``ValueError``.
    """
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    g = rho.grid
    if lam == 1.0:
        return rho
    if lam < 1.0:
        total = rho.mass
        inside = float(np.diff(_cdf_at(rho, np.array([-lam * g.half_width, lam * g.half_width])))[0])
        if total - inside > overflow_tol * max(total, 1e-300):
            raise ValueError(
                f"dilation by {lam:.6g} pushes mass {total - inside:.3e} outside the grid"
            )
    cell_mass = np.diff(_cdf_at(rho, lam * g.nodes))
    return Density(g, np.maximum(cell_mass, 0.0) / g.dx)


def shift_cells(rho: Density, k: int) -> Density:
    """Translate by ``k`` whole cells (positive = to the right)."""
    if k == 0:
        return rho
    v = np.zeros_like(rho.values)
    if k > 0:
        lost = rho.values[-k:].sum()
        v[k:] = rho.values[:-k]
    else:
        lost = rho.values[:-k].sum()
        v[:k] = rho.values[-k:]
    if lost > 0:
        raise ValueError(f"shift by {k} cells pushes mass off the grid")
    return Density(rho.grid, v)


def recenter(rho: Density) -> tuple[Density, float]:
    """Integer-cell shift towards zero center of mass.

    Returns the shifted density and the remaining sub-cell offset
    (``|offset| <= dx/2``).
    """
    mo = moments(rho)
    if mo.zero_mass:
        return rho, 0.0
    dx = rho.grid.dx
    k = int(round(mo.center_of_mass / dx))
    return shift_cells(rho, -k), mo.center_of_mass - k * dx


def normalize_to_class(rho: Density, mass: float) -> Density:
    """Spatial rescaling ``rho(lam x)`` with ``lam = mass(rho)/mass``, then recentering.

    The amplitude is kept, so the result has exactly the requested mass.
    """
    current = rho.mass
    if current <= 0:
        raise ValueError("cannot normalize a density with zero mass")
    lam = current / mass
    scaled = dilate(rho, lam)
    if lam != 1.0:
        scaled = Density(rho.grid, scaled.values / lam)
    return recenter(scaled)[0]


# -- constructors -------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def cell_average(grid: Grid, f: Callable[[np.ndarray], np.ndarray], *, sub: int = 1) -> np.ndarray:
    """Cell averages of ``f`` by 8-point Gauss-Legendre on ``sub`` pieces per cell."""
    h = grid.dx / sub
    left = (grid.nodes[:-1, None] + h * np.arange(sub)[None, :]).ravel()
    pts = left[:, None] + 0.5 * h * (_GL_X[None, :] + 1.0)
    vals = f(pts) @ (0.5 * _GL_W)
    return vals.reshape(grid.n_cells, sub).mean(axis=1)


def from_function(grid: Grid, f: Callable[[np.ndarray], np.ndarray], *, sub: int = 1) -> Density:
    return Density(grid, np.maximum(cell_average(grid, f, sub=sub), 0.0))


def indicator(grid: Grid, a: float, b: float, height: float = 1.0) -> Density:
    """``height * 1_[a,b]`` with exact partial-cell coverage."""
    lo = np.clip(grid.nodes[:-1], a, b)
    hi = np.clip(grid.nodes[1:], a, b)
    return Density(grid, height * (hi - lo) / grid.dx)


def gaussian(grid: Grid, center: float = 0.0, std: float = 1.0, mass: float = 1.0) -> Density:
    """Cell-averaged Gaussian with the requested total mass on the grid."""
    from scipy.special import erf

    z = (grid.nodes - center) / (std * math.sqrt(2.0))
    cdf = 0.5 * (1.0 + erf(z))
    v = np.diff(cdf) / grid.dx
    return Density(grid, v * mass / (v.sum() * grid.dx))


def ball_profile(grid: Grid, params: Params, radius: float) -> Density:
    """``rho_R = d M / (sigma_d R^d) 1_{B_R}``."""
    d = params.d
    height = d * params.mass / (unit_sphere_area(d) * radius**d)
    return indicator(grid, -radius, radius, height)


def _bump(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


_BUMP_MASS = integrate.quad(lambda t: math.exp(-1.0 / (1.0 - t * t)), -1.0, 1.0, epsabs=1e-15)[0]
_BUMP_CDF_T = np.linspace(-1.0, 1.0, 4097)


def _bump_cdf_table() -> np.ndarray:
    pieces = [
        integrate.quad(lambda t: math.exp(-1.0 / (1.0 - t * t)), a, b, epsabs=1e-16)[0]
        for a, b in zip(_BUMP_CDF_T[:-1], _BUMP_CDF_T[1:])
    ]
    return np.concatenate(([0.0], np.cumsum(pieces))) / _BUMP_MASS


_BUMP_CDF = None


def mollifier(t: np.ndarray) -> np.ndarray:
    """Standard unit-mass bump supported in ``[-1, 1]``."""
    return _bump(np.asarray(t, dtype=float)) / _BUMP_MASS


def mollifier_cdf(t: np.ndarray) -> np.ndarray:
    global _BUMP_CDF
    if _BUMP_CDF is None:
        _BUMP_CDF = _bump_cdf_table()
    t = np.asarray(t, dtype=float)
    # cubic accuracy is not needed: the table spacing is 5e-4 and the cdf is smooth
    return np.interp(t, _BUMP_CDF_T, _BUMP_CDF, left=0.0, right=1.0)


def mollified_counterexample(grid: Grid, eps: float, alpha: float, d: int = 1) -> Density:
    """``phi_eps + eps^alpha (phi_eps * 1_{B(0,1)})``: a spike over a thin plateau.

    Requires ``alpha > d + 2``.
    """
    if not alpha > d + 2:
        raise ValueError(f"alpha must exceed d + 2 = {d + 2}, got {alpha}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if 1.0 + eps > grid.half_width:
        raise ValueError("the mollified ball does not fit in the grid")

    def f(x: np.ndarray) -> np.ndarray:
        spike = mollifier(x / eps) / eps
        plateau = mollifier_cdf((x + 1.0) / eps) - mollifier_cdf((x - 1.0) / eps)
        return spike + eps**alpha * plateau

    sub = max(1, int(math.ceil(8 * grid.dx / eps)))
    return from_function(grid, f, sub=sub)


def random_density(grid: Grid, rng: np.random.Generator, mass: float = 1.0) -> Density:
    """Sum of 1-4 Gaussian bumps centered in ``[-L/2, L/2]``, scaled to ``mass``."""
    L = grid.half_width
    k = int(rng.integers(1, 5))
    centers = rng.uniform(-L / 2, L / 2, size=k)
    widths = rng.uniform(0.05 * L, 0.2 * L, size=k)
    weights = rng.uniform(0.2, 1.0, size=k)
    x = grid.centers
    v = sum(w * np.exp(-0.5 * ((x - c) / sd) ** 2) for c, sd, w in zip(centers, widths, weights))
    v = np.asarray(v)
    return Density(grid, v * mass / (v.sum() * grid.dx))


# -- CSV ----------------------------------------------------------------------


def write_density_csv(path: str | Path, rho: Density) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "rho"])
        for x, r in zip(rho.grid.centers, rho.values):
            w.writerow([f"{x:.17g}", f"{r:.17g}"])


def read_density_csv(path: str | Path) -> Density:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x, v = data[:, 0], data[:, 1]
    n = len(x)
    dx = (x[-1] - x[0]) / (n - 1)
    grid = Grid(float(round(-(x[0] - dx / 2), 12)), n)
    return Density(grid, v)
