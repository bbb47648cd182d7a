"""Explicit upwind finite-volume integration of the aggregation-diffusion flow.

The equation is written as a continuity equation ``rho_t + (rho u)_x = 0``
with ``u = -psi_x`` and ``psi = m/(m-1) rho^{m-1} + 2 beta rho - chi K_s*rho``.
Face velocities come from differences of ``psi``; the face flux takes the
density from the upwind cell. The zero-flux condition at both ends of the
box makes the mass update telescope exactly, and under the CFL restriction
of :func:`cfl_dt` every update is a convex combination, hence nonnegative.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .energy import EnergyBreakdown, free_energy
from .grid import Density, Params
from .riesz import KernelWeights, TestFunction, build_weights, symmetric_form

log = logging.getLogger(__name__)

CFL_TRANSPORT = 0.4
CFL_DIFFUSION = 0.2
BLOW_UP = 1e6


class BlowUpError(FloatingPointError):
    pass


@dataclass(frozen=True)
class VelocityField:
    psi: np.ndarray
    u: np.ndarray
    """Velocities on the ``n-1`` interior faces."""
    potential: np.ndarray
    """``K_s*rho`` at the cell centers (kept for the energy)."""


def velocity_potential(rho: Density, p: Params, W: KernelWeights) -> VelocityField:
    v = rho.values
    pot = W.apply(v)
    psi = p.m / (p.m - 1) * v ** (p.m - 1) + 2 * p.beta * v - p.chi * pot
    u = -np.diff(psi) / rho.grid.dx
    return VelocityField(psi, u, pot)


def _energy(v: np.ndarray, pot: np.ndarray, p: Params, dx: float) -> EnergyBreakdown:
    return EnergyBreakdown.from_terms(
        float((v**p.m).sum() * dx / (p.m - 1)),
        float(p.beta * (v * v).sum() * dx),
        float(-0.5 * p.chi * dx * (v @ pot)),
    )


def _cfl(v: np.ndarray, u: np.ndarray, dx: float, diffusivity: np.ndarray) -> float:
    umax = float(np.max(np.abs(u))) if u.size else 0.0
    dmax = float(np.max(diffusivity))
    dt = math.inf
    if umax > 0:
        dt = CFL_TRANSPORT * dx / umax
    if dmax > 0:
        dt = min(dt, CFL_DIFFUSION * dx * dx / dmax)
    return dt


def cfl_dt(rho: Density, p: Params, W: KernelWeights, vel: VelocityField | None = None) -> float:
    """Largest admissible step: transport and degenerate-diffusion restrictions combined."""
    vel = vel or velocity_potential(rho, p, W)
    v = rho.values
    return _cfl(v, vel.u, rho.grid.dx, p.m * v ** (p.m - 1) + 2 * p.beta * v)


def _upwind_update(v: np.ndarray, u: np.ndarray, dt: float, dx: float) -> np.ndarray:
    flux = np.zeros(v.size + 1)
    flux[1:-1] = np.maximum(u, 0.0) * v[:-1] + np.minimum(u, 0.0) * v[1:]
    return v - dt / dx * np.diff(flux)


def step(
    rho: Density, p: Params, W: KernelWeights, dt: float, vel: VelocityField | None = None
) -> Density:
    """One forward-Euler step of the upwind scheme. Rejects ``dt`` beyond :func:`cfl_dt`."""
    vel = vel or velocity_potential(rho, p, W)
    limit = cfl_dt(rho, p, W, vel)
    if not 0 < dt <= limit * (1 + 1e-12):
        raise ValueError(f"time step {dt:.3e} violates the CFL limit {limit:.3e}")
    new = _upwind_update(rho.values, vel.u, dt, rho.grid.dx)
    # a convex combination is nonnegative up to round-off in the flux sums
    return Density(rho.grid, np.maximum(new, 0.0))


@dataclass
class Trajectory:
    times: list[float]
    states: list[Density]
    energy_log: list[EnergyBreakdown]
    dt_history: np.ndarray = field(repr=False)
    step_energies: np.ndarray = field(repr=False)
    """``F_s`` before every step, and after the last one."""
    mass_drift: float = 0.0
    """Largest ``|mass(t) - mass(0)|`` over all steps."""
    boundary_mass: float = 0.0
    """Largest mass seen in the two outermost cells at either end."""

    @property
    def final(self) -> Density:
        return self.states[-1]

    def energy_increases(self) -> np.ndarray:
        return np.diff(self.step_energies)


def _output_schedule(T: float, output_times: Sequence[float] | None) -> list[float]:
    if not T > 0:
        raise ValueError(f"final time must be positive, got {T}")
    times = sorted({float(t) for t in (output_times or [])} | {float(T)})
    if times[0] < 0 or times[-1] > T:
        raise ValueError("output times must lie in [0, T]")
    return [t for t in times if t > 0]


def _integrate(
    rho0: Density,
    T: float,
    output_times: Sequence[float] | None,
    advance: Callable[[np.ndarray], tuple[float, Callable[[float], np.ndarray], EnergyBreakdown]],
    energy_of: Callable[[np.ndarray], EnergyBreakdown],
    safety: float,
    max_steps: int,
    stop: Callable[[float, Density], bool] | None = None,
) -> Trajectory:
    grid = rho0.grid
    dx = grid.dx
    targets = _output_schedule(T, output_times)
    v = rho0.values.copy()
    m0 = float(v.sum() * dx)
    t = 0.0
    times, states, elog = [0.0], [rho0], [energy_of(v)]
    dts: list[float] = []
    energies: list[float] = []
    drift = 0.0
    edge = 0.0
    n = 0
    for target in targets:
        while t < target * (1 - 1e-14):
            if n >= max_steps:
                raise RuntimeError(f"step budget of {max_steps} exhausted at t = {t:.4g}")
            limit, apply, e = advance(v)
            energies.append(e.total)
            dt = min(safety * limit, target - t)
            v = apply(dt)
            t = target if target - t - dt <= 1e-14 * target else t + dt
            dts.append(dt)
            n += 1
            drift = max(drift, abs(float(v.sum() * dx) - m0))
            edge = max(edge, float((v[:2].sum() + v[-2:].sum()) * dx))
            if not np.isfinite(v).all() or v.max() > BLOW_UP:
                raise BlowUpError(f"density exceeded {BLOW_UP:g} at t = {t:.4g}")
        times.append(target)
        states.append(Density(grid, v.copy()))
        elog.append(energy_of(v))
        if stop is not None and stop(target, states[-1]):
            break
    energies.append(elog[-1].total)
    if edge > 1e-8 * max(m0, 1e-300):
        log.warning("mass %.2e reached the box boundary; enlarge the box", edge)
    return Trajectory(times, states, elog, np.array(dts), np.array(energies), drift, edge)


def evolve(
    p: Params,
    rho0: Density,
    T: float,
    output_times: Sequence[float] | None = None,
    *,
    W: KernelWeights | None = None,
    safety: float = 0.9,
    max_steps: int = 10_000_000,
    stop: Callable[[float, Density], bool] | None = None,
) -> Trajectory:
    """Integrate up to ``T`` with ``dt = safety * cfl_dt`` and land on every output time.

    ``stop(t, rho)`` is consulted at every output time and ends the run early
    when it returns true.
    """
    W = W or build_weights(rho0.grid, p.s)
    dx = rho0.grid.dx
    m, beta, chi = p.m, p.beta, p.chi
    a = m / (m - 1)

    def advance(v):
        # same arithmetic as velocity_potential/cfl_dt/step, fused for speed
        pot = W.apply(v)
        vm1 = v ** (m - 1)
        psi = a * vm1 + 2 * beta * v - chi * pot
        u = -np.diff(psi) / dx
        limit = _cfl(v, u, dx, m * vm1 + 2 * beta * v)
        e = EnergyBreakdown.from_terms(
            float(vm1 @ v) * dx / (m - 1), beta * float(v @ v) * dx, -0.5 * chi * dx * float(v @ pot)
        )
        return limit, lambda dt: np.maximum(_upwind_update(v, u, dt, dx), 0.0), e

    def energy_of(v):
        return free_energy(Density(rho0.grid, v), p, W)

    return _integrate(rho0, T, output_times, advance, energy_of, safety, max_steps, stop)


def local_limit_evolve(
    p: Params,
    rho0: Density,
    T: float,
    output_times: Sequence[float] | None = None,
    *,
    safety: float = 0.9,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """Integrate ``rho_t = (rho^m)_xx + (beta - chi/2) (rho^2)_xx`` on the same grid.

    Fluxes are central differences of the pressure ``rho^m + (beta-chi/2) rho^2``.
    The energy log holds the local limit functional.
    """
    if p.beta < p.chi / 2:
        raise ValueError(
            f"the local limit equation is forward-backward for beta < chi/2 (beta={p.beta}, chi={p.chi})"
        )
    g = p.beta - p.chi / 2
    dx = rho0.grid.dx

    def energy_of(v):
        return EnergyBreakdown.from_terms(
            float((v**p.m).sum() * dx / (p.m - 1)), float(g * (v * v).sum() * dx), 0.0
        )

    def advance(v):
        P = v**p.m + g * v * v
        flux = np.zeros(v.size + 1)
        flux[1:-1] = -np.diff(P) / dx
        limit = _cfl(v, np.zeros(0), dx, p.m * v ** (p.m - 1) + 2 * g * v)
        return limit, lambda dt: np.maximum(v - dt / dx * np.diff(flux), 0.0), energy_of(v)

    return _integrate(rho0, T, output_times, advance, energy_of, safety, max_steps)


# -- diagnostics ---------------------------------------------------------------


@dataclass(frozen=True)
class TimeWindow:
    """Smooth time cutoff with its derivative."""

    f: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    t0: float
    t1: float


def bump_window(t0: float, t1: float) -> TimeWindow:
    """``exp(1 - 1/(1 - z^2))`` on ``(t0, t1)`` with ``z`` the rescaled time."""
    if not t1 > t0:
        raise ValueError("window needs t1 > t0")
    c, h = 0.5 * (t0 + t1), 0.5 * (t1 - t0)

    def f(t):
        z = (np.asarray(t, dtype=float) - c) / h
        out = np.zeros_like(z)
        inside = np.abs(z) < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
        return out

    def d1(t):
        z = (np.asarray(t, dtype=float) - c) / h
        out = np.zeros_like(z)
        inside = np.abs(z) < 1
        zi = z[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - zi**2)) * (-2.0 * zi / (1.0 - zi**2) ** 2) / h
        return out

    return TimeWindow(f, d1, t0, t1)


def zero_window() -> TimeWindow:
    def zero(t):
        return np.zeros_like(np.asarray(t, dtype=float))

    return TimeWindow(zero, zero, 0.0, 0.0)


MIN_WINDOW_SAMPLES = 20


def weak_residual(
    traj: Trajectory, phi: TestFunction, eta: TimeWindow, p: Params, W: KernelWeights | None = None
) -> float:
    """``|LHS - RHS|`` of the space-time weak formulation on the recorded states.

    Time integrals use the trapezoid rule over the recorded times; the
    interaction double integral uses :func:`aggdiff.riesz.symmetric_form`.
    """
    t = np.asarray(traj.times, dtype=float)
    eta_v, deta = eta.f(t), eta.d1(t)
    if not np.any(eta_v) and not np.any(deta):
        return 0.0
    inside = np.count_nonzero((t > eta.t0) & (t < eta.t1))
    if inside < MIN_WINDOW_SAMPLES:
        raise ValueError(
            f"only {inside} recorded states inside the time window; need at least {MIN_WINDOW_SAMPLES}"
        )
    grid = traj.states[0].grid
    W = W or build_weights(grid, p.s)
    x, dx = grid.centers, grid.dx
    f, f2 = phi.f(x), phi.d2(x)
    lhs = np.empty(t.size)
    rhs = np.empty(t.size)
    for k, rho in enumerate(traj.states):
        v = rho.values
        lhs[k] = -float((v * f).sum() * dx) * deta[k]
        if eta_v[k] == 0:
            rhs[k] = 0.0
            continue
        local = float(((v**p.m + p.beta * v * v) * f2).sum() * dx)
        rhs[k] = eta_v[k] * (local - 0.5 * p.chi * symmetric_form(rho, phi, W))
    return float(abs(trapezoid(lhs - rhs, t)))


def stationary_defect(rho: Density, phi: TestFunction, p: Params, W: KernelWeights) -> float:
    """Spatial part of the weak form: ``int phi'' (rho^m + beta rho^2) - chi/2 I_s``."""
    x, dx = rho.grid.centers, rho.grid.dx
    v = rho.values
    local = float(((v**p.m + p.beta * v * v) * phi.d2(x)).sum() * dx)
    return local - 0.5 * p.chi * symmetric_form(rho, phi, W)


BREACH_FLOOR = 1e-9


def breach_amount(rho: Density) -> float:
    """Largest rise of the right half above its running minimum (zero if nonincreasing)."""
    v = rho.values
    right = v[v.size // 2 :]
    return float(np.max(right - np.minimum.accumulate(right)))


def monotonicity_breach(traj: Trajectory, floor: float = BREACH_FLOOR) -> float | None:
    """Earliest recorded time at which the right half stops being nonincreasing."""
    for t, rho in zip(traj.times, traj.states):
        if breach_amount(rho) > floor:
            return float(t)
    return None
