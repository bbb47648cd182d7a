"""Stationary states by the rescaled fixed-point iteration, and closed-form limit objects."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .energy import EnergyBreakdown, free_energy
from .grid import Density, Grid, Params, gaussian, indicator, lp_norm, normalize_to_class, recenter
from .nodes import NodeDensity, minimize_energy
from .riesz import KernelWeights, build_weights
from .special import gamma, unit_ball_volume, unit_sphere_area

log = logging.getLogger(__name__)


def f_inverse(v, m: float, beta: float):
    """Solve ``m/(m-1) t^{m-1} + 2 beta t = v`` for ``t >= 0`` (elementwise)."""
    v = np.maximum(np.asarray(v, dtype=float), 0.0)
    pure = ((m - 1) * v / m) ** (1.0 / (m - 1))
    if beta == 0:
        return pure if pure.ndim else float(pure)
    # both single-term solutions bound the root from above; Newton on the
    # convex increasing map then decreases monotonically onto it
    with np.errstate(over="ignore"):  # tiny beta: v/(2 beta) -> inf, pure wins
        t = np.minimum(pure, v / (2 * beta))
    for _ in range(100):
        g = m / (m - 1) * t ** (m - 1) + 2 * beta * t - v
        dg = m * t ** (m - 2) + 2 * beta
        step = g / dg
        t = np.maximum(t - step, 0.0)
        if np.all(np.abs(step) <= 1e-15 * np.maximum(t, 1.0)):
            break
    return t if t.ndim else float(t)


def multiplier(rho: Density, p: Params, W: KernelWeights, energy: EnergyBreakdown | None = None) -> float:
    """Lagrange multiplier from the energy: ``-2F/M - (m-2)/((m-1)M) int rho^m``."""
    e = energy or free_energy(rho, p, W)
    M = rho.mass
    return -2.0 / M * e.total - (p.m - 2) / ((p.m - 1) * M) * float((rho.values**p.m).sum() * rho.grid.dx)


def multiplier_from_norms(rho: Density, p: Params) -> float:
    """Lagrange multiplier from the virial identity (valid only at a minimizer)."""
    d, s, m = p.d, p.s, p.m
    M = rho.mass
    nm = lp_norm(rho, m) ** m
    n2 = lp_norm(rho, 2) ** 2
    return ((d * m + 2 * s * m - 2 * d) / (m - 1) * nm + 4 * p.beta * s * n2) / (M * (d - 2 * s))


@dataclass
class SteadyState:
    rho: Density
    c_s: float
    iterations: int
    """Sweeps of the fixed-point iteration."""
    residual: float
    """Sup-norm of the last fixed-point update."""
    virial_residual: float
    cs_consistency: float
    converged: bool
    collapsed: bool = False
    omega: float = 1.0
    nodes: NodeDensity | None = None
    """Node representation after energy polishing, if it ran."""
    polish_iterations: int = 0
    polish_residual: float = math.nan
    residual_history: list[float] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class SteadyDiagnostics:
    c_s: float
    c_s_virial: float
    cs_consistency: float
    cs_relative: float
    virial_residual: float
    virial_relative: float
    energy: EnergyBreakdown
    energy_virial: float
    height: float
    support_radius: float

    def as_dict(self) -> dict:
        e = self.energy
        return {
            "c_s": self.c_s,
            "c_s_virial": self.c_s_virial,
            "cs_consistency": self.cs_consistency,
            "cs_relative": self.cs_relative,
            "virial_residual": self.virial_residual,
            "virial_relative": self.virial_relative,
            "energy_virial": self.energy_virial,
            "height": self.height,
            "support_radius": self.support_radius,
            "energy": {"h_m": e.h_m, "quad": e.quad, "w_s": e.w_s, "total": e.total},
        }


def support_radius(rho: Density, floor: float = 0.0) -> float:
    """Largest ``|x|`` reached by a cell with ``rho > floor`` (cell edge)."""
    g = rho.grid
    idx = np.nonzero(rho.values > floor)[0]
    if idx.size == 0:
        return 0.0
    return float(np.max(np.abs(g.centers[idx])) + 0.5 * g.dx)


def steady_diagnostics(rho: Density, p: Params, W: KernelWeights) -> SteadyDiagnostics:
    """Minimizer identities evaluated on ``rho``.

    At a minimizer ``||rho||_m^m + beta ||rho||_2^2 = -(d-2s)/d W_s``, the two
    multiplier formulas agree, and ``F_s`` equals its virial expression.
    """
    d, s, m = p.d, p.s, p.m
    e = free_energy(rho, p, W)
    nm = lp_norm(rho, m) ** m
    n2 = lp_norm(rho, 2) ** 2
    virial = abs(nm + p.beta * n2 + (d - 2 * s) / d * e.w_s)
    c1 = multiplier(rho, p, W, e)
    c2 = multiplier_from_norms(rho, p)
    f_vir = -((d * m - 2 * d + 2 * s) / (m - 1) * nm + 2 * s * p.beta * n2) / (d - 2 * s)
    return SteadyDiagnostics(
        c_s=c1,
        c_s_virial=c2,
        cs_consistency=abs(c1 - c2),
        cs_relative=abs(c1 - c2) / max(abs(c1), 1e-300),
        virial_residual=virial,
        virial_relative=virial / max(abs(e.w_s), 1e-300),
        energy=e,
        energy_virial=f_vir,
        height=float(rho.values.max()),
        support_radius=support_radius(rho),
    )


def limit_profile(p: Params, grid: Grid) -> Density:
    """Minimizer of the local limit functional: a centered plateau of height ``gamma^{1/(m-2)}``."""
    if p.beta >= p.chi / 2:
        raise ValueError("the limit functional has no minimizer when beta >= chi/2")
    h, R0 = limit_height(p), limit_radius(p)
    if R0 >= grid.half_width:
        raise ValueError(f"limit profile radius {R0:.4g} does not fit in [-L, L]")
    return indicator(grid, -R0, R0, h)


def limit_height(p: Params) -> float:
    return p.gamma ** (1.0 / (p.m - 2))


def limit_radius(p: Params) -> float:
    d = p.d
    return (d * p.mass / unit_sphere_area(d)) ** (1.0 / d) * p.gamma ** (-1.0 / (d * (p.m - 2)))


def limit_energy_value(p: Params) -> float:
    """Minimum of the limit functional: ``-M (m-2)/(m-1) gamma^{(m-1)/(m-2)}``."""
    return -p.mass * (p.m - 2) / (p.m - 1) * p.gamma ** ((p.m - 1) / (p.m - 2))


# -- energy of uniform balls -------------------------------------------------


@dataclass(frozen=True)
class BallCoefficients:
    """``F_s[rho_R] = C1 R^-alpha + C2 R^-gamma - C3 R^-delta``."""

    c1: float
    c2: float
    c3: float
    alpha: float
    gamma: float
    delta: float


def ball_coefficients(p: Params, s: float | None = None) -> BallCoefficients:
    s = p.s if s is None else s
    d, m, M = p.d, p.m, p.mass
    sig = unit_sphere_area(d)
    c1 = (d * M) ** m * sig ** (1 - m) / (d * (m - 1))
    c2 = p.beta * (d * M) ** 2 / (sig * d)
    c3 = (
        p.chi * d**2 * M**2 * gamma(s + 0.5) * gamma(d / 2 - s)
        / (4 * math.sqrt(math.pi) * sig * gamma(s + 1) * gamma(d / 2 + s + 1))
    )
    return BallCoefficients(c1, c2, c3, d * (m - 1), float(d), d - 2 * s)


def ball_energy(p: Params, R, s: float | None = None):
    b = ball_coefficients(p, s)
    R = np.asarray(R, dtype=float)
    return b.c1 * R**-b.alpha + b.c2 * R**-b.gamma - b.c3 * R**-b.delta


def ball_radius(p: Params, s: float | None = None, omega: float | None = None) -> float:
    """Closed-form optimal ball radius for ``beta = 0``.

    ``omega`` defaults to the volume of the unit ball (2 in one dimension).
    """
    if p.beta != 0:
        raise ValueError("the closed form holds for beta = 0 only; use ball_radius_general")
    s = p.s if s is None else s
    d, m, M = p.d, p.m, p.mass
    om = unit_ball_volume(d) if omega is None else omega
    num = 2 * math.sqrt(math.pi) * M ** (m - 2) * gamma(s + 1) * gamma(d / 2 + s + 1)
    den = p.chi * om ** (m - 2) * gamma(s + 0.5) * gamma(d / 2 - s + 1)
    return (num / den) ** (1.0 / (2 * s + d * (m - 2)))


def ball_radius_general(p: Params, s: float | None = None) -> float:
    """Root of ``-alpha C1 - gamma C2 R^{alpha-gamma} + delta C3 R^{alpha-delta}``."""
    b = ball_coefficients(p, s)

    def h(logR: float) -> float:
        R = math.exp(logR)
        return -b.alpha * b.c1 - b.gamma * b.c2 * R ** (b.alpha - b.gamma) + b.delta * b.c3 * R ** (b.alpha - b.delta)

    lo, hi = -5.0, 5.0
    while h(lo) > 0:
        lo -= 5.0
    while h(hi) < 0:
        hi += 5.0
        if hi > 700:
            raise ValueError("no finite optimal ball radius")
    return math.exp(brentq(h, lo, hi, xtol=1e-14, rtol=1e-14))


def suggest_half_width(p: Params, factor: float = 2.5, minimum: float = 4.0) -> float:
    """Box half-width comfortably containing the steady state (from the ball estimate)."""
    return max(minimum, factor * ball_radius_general(p))


# -- fixed-point iteration ---------------------------------------------------


def default_initial(p: Params, grid: Grid) -> Density:
    if p.beta < p.chi / 2 and limit_radius(p) < grid.half_width:
        return limit_profile(p, grid)
    R = ball_radius_general(p)
    return gaussian(grid, 0.0, min(0.5 * R, grid.half_width / 4), p.mass)


def _mass_multiplier(pot: np.ndarray, p: Params, dx: float) -> float:
    """``C`` with ``sum f^{-1}((pot - C)_+) dx = M``; the mass decreases in ``C``."""

    def excess(c):
        return float(f_inverse(np.maximum(pot - c, 0.0), p.m, p.beta).sum() * dx) - p.mass

    hi = float(pot.max())
    lo = hi - 1.0
    while excess(lo) < 0:
        lo = hi - 2.0 * (hi - lo)
    return brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def discrete_steady_state(p: Params, grid: Grid, tol: float = 1e-12, max_iter: int = 20000) -> SteadyState:
    """Equilibrium of the finite-volume flow on ``grid`` (no energy polishing)."""
    return fixed_point_solve(p, grid=grid, tol=tol, max_iter=max_iter, mass_fix="multiplier", polish=False)


def fixed_point_solve(
    p: Params,
    init: Density | None = None,
    tol: float = 1e-10,
    max_iter: int = 20000,
    *,
    grid: Grid | None = None,
    omega: float = 1.0,
    omega_min: float = 1.0 / 64,
    W: KernelWeights | None = None,
    window: int = 50,
    mass_fix: str = "dilate",
    polish: bool = True,
    n_nodes: int = 512,
    polish_tol: float = 5e-5,
) -> SteadyState:
    """Damped iteration of the Euler-Lagrange relation with mass rescaling.

    Each sweep solves ``m/(m-1) r^{m-1} + 2 beta r = (chi K_s*rho - C_s)_+``
    pointwise for ``r`` with ``C_s`` from the current energy, rescales ``r``
    in space to mass ``M``, and mixes it with the previous iterate using
    weight ``omega``. Single flips of the edge cell make the update jump
    now and then, so ``omega`` is only halved when a whole ``window`` of
    sweeps stays above twice the best update seen so far. Sweeps stop when the sup-norm of the update is
    below ``tol``.

    On a grid the support of the iterate can only move by whole cells, and
    for small ``s`` the steep edge of ``K_s*rho`` pins it: the sweep then
    settles on a state whose width is set by the initial guess rather than
    by the energy. With ``polish`` the converged iterate is therefore handed
    to an exact energy minimization over ``n_nodes`` equal-mass gaps (see
    :mod:`aggdiff.nodes`), and the result is averaged back onto the grid.
    ``converged`` then refers to the minimization: its force residual is
    limited by round-off in the energy near ``1e-6``, hence ``polish_tol``.

    ``mass_fix="multiplier"`` replaces the spatial rescaling by choosing
    ``C_s`` so that the update has mass ``M`` exactly. Its fixed points are
    exact discrete equilibria of the finite-volume flow (``psi`` constant on
    the support); combine it with ``polish=False`` to obtain one.
    """
    if mass_fix not in ("dilate", "multiplier"):
        raise ValueError(f"mass_fix must be 'dilate' or 'multiplier', got {mass_fix!r}")
    if init is None:
        if grid is None:
            raise ValueError("pass an initial density or a grid")
        init = default_initial(p, grid)
    grid = init.grid
    W = W or build_weights(grid, p.s)
    rho = normalize_to_class(init, p.mass)
    scale0 = float(rho.values.max())
    history: list[float] = []
    res = math.inf
    best = (math.inf, rho)
    collapsed = False
    cooldown = 0
    it = 0
    for it in range(1, max_iter + 1):
        pot = p.chi * W.apply(rho.values)
        if mass_fix == "dilate":
            c = multiplier(rho, p, W)
        else:
            c = _mass_multiplier(pot, p, grid.dx)
        raw = f_inverse(np.maximum(pot - c, 0.0), p.m, p.beta)
        if not np.any(raw > 0):
            collapsed = True
            break
        if mass_fix == "dilate":
            tilde = normalize_to_class(Density(grid, raw), p.mass)
        else:
            tilde = Density(grid, raw * (p.mass / (raw.sum() * grid.dx)))
        mixed = (1 - omega) * rho.values + omega * tilde.values
        new = recenter(Density(grid, mixed))[0]
        res = float(np.max(np.abs(new.values - rho.values)))
        history.append(res)
        cooldown -= 1
        stalled = len(history) >= window and min(history[-window:]) > 2.0 * best[0]
        if stalled and omega > omega_min and cooldown <= 0:
            omega = max(omega / 2, omega_min)
            cooldown = window
            log.debug("sweep %d: update grew to %.3e, omega -> %g", it, res, omega)
        rho = new
        if res < best[0]:
            best = (res, rho)
        if float(rho.values.max()) < 1e-12 * scale0:
            collapsed = True
            break
        if res <= tol:
            break
    converged = res <= tol and not collapsed
    if not converged:
        # with polishing the sweep only supplies a starting point
        report = log.debug if polish and not collapsed else log.warning
        report("fixed point not converged after %d sweeps (residual %.3e)", it, res)
        if not collapsed:
            res, rho = best
    nodes = None
    polish_iter, polish_res = 0, math.nan
    if polish and not collapsed:
        out = minimize_energy(NodeDensity.from_density(rho, n_nodes), p, tol=polish_tol)
        nodes = out.nodes.centered()
        polish_iter, polish_res = out.iterations, out.force_residual
        converged = out.converged
        if not out.converged:
            log.warning("energy polishing stopped at residual %.3e", polish_res)
        rho = nodes.to_density(grid)
    diag = steady_diagnostics(rho, p, W)
    return SteadyState(
        rho=rho,
        c_s=diag.c_s,
        iterations=it,
        residual=res,
        virial_residual=diag.virial_residual,
        cs_consistency=diag.cs_consistency,
        converged=converged,
        collapsed=collapsed,
        omega=omega,
        nodes=nodes,
        polish_iterations=polish_iter,
        polish_residual=polish_res,
        residual_history=history,
    )
