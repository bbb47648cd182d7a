"""Minimizing-movement (JKO) scheme in one dimension.

Each step minimizes ``F_s[rho] + W_2^2(rho, rho_prev) / (2 tau)`` over
densities with fixed mass. In 1D the Wasserstein distance is the L2 distance
between quantile functions, so the unknowns are the positions of ``K + 1``
equal-mass nodes (see :mod:`aggdiff.nodes`): the energy is exact in these
coordinates and ``W_2^2`` is an explicit quadratic form. The minimization is
a projected gradient method with Barzilai-Borwein steps, where the projection
onto ordered node vectors is isotonic regression.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyBreakdown
from .grid import Density, Grid, Params
from .nodes import NodeDensity, node_energy_grad, w2_squared_nodes, w2_squared_nodes_grad

log = logging.getLogger(__name__)


# -- quantiles and the Wasserstein distance -----------------------------------


@dataclass(frozen=True, eq=False)
class Quantile:
    """Quantile function of ``rho / M`` sampled at the midpoints ``(k - 1/2)/K``."""

    n_particles: int
    q: np.ndarray
    mass: float

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.shape != (self.n_particles,):
            raise ValueError(f"expected {self.n_particles} quantile values, got shape {q.shape}")
        if np.any(np.diff(q) < 0):
            raise ValueError("quantile values must be nondecreasing")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    @classmethod
    def from_density(cls, rho: Density, n_particles: int = 256) -> "Quantile":
        levels = (np.arange(n_particles) + 0.5) / n_particles * rho.mass
        return cls(n_particles, _quantile_at(rho, levels), rho.mass)

    def to_density(self, grid: Grid) -> Density:
        """Spread mass ``M/K`` uniformly between consecutive half-way points."""
        q = self.q
        if self.n_particles == 1:
            half = grid.dx
            edges = np.array([q[0] - half, q[0] + half])
        else:
            mid = 0.5 * (q[1:] + q[:-1])
            edges = np.concatenate([[2 * q[0] - mid[0]], mid, [2 * q[-1] - mid[-1]]])
        edges = np.maximum.accumulate(edges)
        # collapsed gaps become one-cell-wide so the reconstruction stays a density
        edges = edges + np.arange(edges.size) * 1e-12 * grid.dx
        levels = np.linspace(0.0, self.mass, edges.size)
        cdf = np.interp(grid.nodes, edges, levels)
        return Density(grid, np.maximum(np.diff(cdf), 0.0) / grid.dx)


def _occupied_cdf(rho: Density) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative mass at the left edge of every occupied cell, its position, and its mass."""
    g = rho.grid
    cells = rho.values * g.dx
    occ = np.nonzero(cells > 0)[0]
    if occ.size == 0:
        raise ValueError("density has no mass")
    mass = cells[occ]
    start = np.concatenate([[0.0], np.cumsum(mass)[:-1]])
    return start, g.nodes[occ], mass


def _quantile_at(rho: Density, u: np.ndarray, hint: np.ndarray | None = None) -> np.ndarray:
    """Pseudo-inverse of the cumulative mass; ``hint`` picks the occupied cell explicitly."""
    start, left, mass = _occupied_cdf(rho)
    u = np.asarray(u, dtype=float)
    j = np.searchsorted(start, u if hint is None else hint, side="right") - 1
    j = np.clip(j, 0, start.size - 1)
    frac = np.clip((u - start[j]) / mass[j], 0.0, 1.0)
    return left[j] + frac * rho.grid.dx


def w2_distance(rho: Density, sigma: Density, rtol: float = 1e-10) -> float:
    """Exact ``W_2`` between two cell-averaged densities of equal mass.

    Both quantile functions are piecewise linear in the mass variable with
    breakpoints at cell edges; on the merged breakpoints the squared
    difference is a quadratic, integrated exactly by Simpson's rule.
    """
    if rho.grid != sigma.grid:
        raise ValueError("densities live on different grids")
    M, S = rho.mass, sigma.mass
    if abs(M - S) > rtol * max(M, S, 1e-300):
        raise ValueError(f"masses differ: {M!r} vs {S!r}")
    M = 0.5 * (M + S)
    a = _occupied_cdf(rho)
    b = _occupied_cdf(sigma)
    brk = np.unique(np.concatenate([a[0] * M / rho.mass, b[0] * M / sigma.mass, [M]]))
    brk = brk[(brk >= 0) & (brk <= M)]
    lo, hi = brk[:-1], brk[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    mid = 0.5 * (lo + hi)

    def on_piece(d: Density, u: np.ndarray) -> np.ndarray:
        scale = d.mass / M
        return _quantile_at(d, u * scale, hint=mid * scale)

    d0 = on_piece(rho, lo) - on_piece(sigma, lo)
    d1 = on_piece(rho, mid) - on_piece(sigma, mid)
    d2 = on_piece(rho, hi) - on_piece(sigma, hi)
    w2sq = float(((hi - lo) / 6.0 * (d0 * d0 + 4 * d1 * d1 + d2 * d2)).sum())
    return math.sqrt(max(w2sq, 0.0))


# -- isotonic projection -------------------------------------------------------


def isotonic_projection(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto nondecreasing vectors (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    means: list[float] = []
    sizes: list[int] = []
    for v in y:
        means.append(float(v))
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            n = sizes[-2] + sizes[-1]
            means[-2] = (means[-2] * sizes[-2] + means[-1] * sizes[-1]) / n
            sizes[-2] = n
            means.pop()
            sizes.pop()
    return np.repeat(means, sizes)


# -- one step ------------------------------------------------------------------


def jko_objective(
    x: np.ndarray, prev: np.ndarray, p: Params, tau: float, mass: float
) -> tuple[float, np.ndarray | None]:
    """``F_s`` of the nodes ``x`` plus ``W_2^2(x, prev)/(2 tau)``, with its gradient."""
    e, g = node_energy_grad(x, p, mass)
    if g is None:
        return math.inf, None
    val = e.total + w2_squared_nodes(x, prev, mass) / (2 * tau)
    return val, g + w2_squared_nodes_grad(x, prev, mass) / (2 * tau)


@dataclass(frozen=True)
class JkoStep:
    nodes: NodeDensity
    energy: EnergyBreakdown
    w2_squared: float
    iterations: int
    grad_norm: float
    """``max_k |dG/dx_k| / mu`` at the returned nodes."""
    converged: bool


def jko_step_nodes(
    prev: NodeDensity,
    p: Params,
    tau: float,
    tol: float = 1e-8,
    max_iter: int = 20000,
) -> JkoStep:
    """One proximal step in node coordinates, started from ``prev``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    mass, y = prev.mass, prev.x
    mu = prev.mu
    x = y.copy()
    val, g = jko_objective(x, y, p, tau, mass)
    start = val
    # round-off level of the objective: below it, descent cannot be read off
    # function values and steps are accepted on the gradient alone
    noise = 1e-13 * (1.0 + abs(val))
    recent = [val]
    alpha = 0.1 * tau / mu  # the proximal term alone has curvature ~ mu/tau
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g))) / mu
        if gnorm <= tol:
            break
        step = alpha
        accepted = False
        ref = max(recent)
        for _ in range(60):
            trial = isotonic_projection(x - step * g)
            tval, tg = jko_objective(trial, y, p, tau, mass)
            if tg is not None:
                d = trial - x
                if tval <= ref + 1e-4 * float(g @ d) or tval <= val + noise:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            log.debug("line search failed at iteration %d (gradient %.3e)", it, gnorm)
            break
        sk, yk = trial - x, tg - g
        sy = float(sk @ yk)
        alpha = float(sk @ sk) / sy if sy > 0 else 2.0 * step
        x, val, g = trial, tval, tg
        recent = (recent + [val])[-10:]
    if val > start + noise:  # pragma: no cover - the nonmonotone window forbids this
        raise RuntimeError("JKO step increased the objective")
    gnorm = float(np.max(np.abs(g))) / mu
    e = node_energy_grad(x, p, mass, need_grad=False)[0]
    return JkoStep(NodeDensity(x, mass), e, w2_squared_nodes(x, y, mass), it, gnorm, gnorm <= tol)


def jko_step(
    rho_prev: Density,
    p: Params,
    tau: float,
    W=None,
    *,
    n_particles: int = 256,
    tol: float = 1e-8,
    max_iter: int = 20000,
) -> Density:
    """One minimizing-movement step on a grid density, reconstructed on the same grid.

    ``W`` is accepted for interface symmetry with the grid solvers; the
    energy is evaluated exactly in node coordinates and needs no weights.
    """
    prev = NodeDensity.from_density(rho_prev, n_particles)
    out = jko_step_nodes(prev, p, tau, tol, max_iter)
    if not out.converged:
        log.warning("JKO step stopped with gradient %.3e > %.1e", out.grad_norm, tol)
    return out.nodes.to_density(rho_prev.grid)


# -- runs ----------------------------------------------------------------------


@dataclass
class JkoRun:
    tau: float
    states: list[Density]
    nodes: list[NodeDensity] = field(repr=False)
    energies: list[float]
    """Exact ``F_s`` of every node state."""
    w2_increments: list[float]
    """``W_2(rho^k, rho^{k-1})`` for ``k >= 1``."""
    second_moments: list[float]
    converged: list[bool] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    def basic1(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-step sides ``F^k + W_2^2/(2 tau)`` and ``F^{k-1}``."""
        F = np.asarray(self.energies)
        w = np.asarray(self.w2_increments)
        return F[1:] + w * w / (2 * self.tau), F[:-1]

    def telescoped(self) -> tuple[np.ndarray, float]:
        """``F^k + sum_{h<=k} W_2^2/(2 tau)`` for every ``k``, against ``F^0``."""
        F = np.asarray(self.energies)
        w = np.asarray(self.w2_increments)
        return F[1:] + np.cumsum(w * w) / (2 * self.tau), float(F[0])

    def second_moment_bound(self) -> np.ndarray:
        """``4 k tau (F^0 - F^k) + 2 m_2(rho^0)``, an upper bound for ``m_2(rho^k)``."""
        F = np.asarray(self.energies)
        k = np.arange(F.size)
        return 4 * k * self.tau * (F[0] - F) + 2 * self.second_moments[0]

    def estimates_table(self) -> np.ndarray:
        """Rows ``k, F_s, w2_inc, second_moment, basic1_lhs, basic1_rhs``."""
        lhs, rhs = self.basic1()
        rows = [[0, self.energies[0], 0.0, self.second_moments[0], math.nan, math.nan]]
        for k in range(1, self.n_steps + 1):
            rows.append(
                [k, self.energies[k], self.w2_increments[k - 1], self.second_moments[k], lhs[k - 1], rhs[k - 1]]
            )
        return np.array(rows, dtype=float)


def jko_run(
    p: Params,
    rho0: Density,
    tau: float,
    n_steps: int,
    *,
    n_particles: int = 256,
    tol: float = 1e-8,
    max_iter: int = 20000,
) -> JkoRun:
    """Chain ``n_steps`` proximal steps; node states are passed on without re-sampling."""
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    grid = rho0.grid
    cur = NodeDensity.from_density(rho0, n_particles)
    e0 = node_energy_grad(cur.x, p, cur.mass, need_grad=False)[0]
    run = JkoRun(tau, [rho0], [cur], [e0.total], [], [cur.second_moment()])
    for k in range(1, n_steps + 1):
        out = jko_step_nodes(cur, p, tau, tol, max_iter)
        if not out.converged:
            log.warning("JKO step %d stopped with gradient %.3e", k, out.grad_norm)
        cur = out.nodes
        run.nodes.append(cur)
        run.states.append(cur.to_density(grid))
        run.energies.append(out.energy.total)
        run.w2_increments.append(math.sqrt(out.w2_squared))
        run.second_moments.append(cur.second_moment())
        run.converged.append(out.converged)
    return run


def write_estimates_csv(path, run: JkoRun) -> None:
    np.savetxt(
        path,
        run.estimates_table(),
        delimiter=",",
        header="k,F_s,w2_inc,second_moment,basic1_lhs,basic1_rhs",
        comments="",
        fmt="%.17g",
    )
