"""Free energy, the local limit functional and the a-priori lower bound."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .grid import Density, Params, lp_norm
from .riesz import KernelWeights, interaction_energy
from .special import sds_constant


@dataclass(frozen=True)
class EnergyBreakdown:
    h_m: float
    quad: float
    w_s: float
    total: float

    @classmethod
    def from_terms(cls, h_m: float, quad: float, w_s: float) -> "EnergyBreakdown":
        return cls(h_m, quad, w_s, h_m + quad + w_s)


def _check(rho: Density, p: Params, W: KernelWeights) -> None:
    if rho.grid != W.grid:
        raise ValueError("density and kernel weights live on different grids")
    if W.s != p.s:
        raise ValueError(f"kernel weights were built for s={W.s}, params say s={p.s}")


def free_energy(rho: Density, p: Params, W: KernelWeights) -> EnergyBreakdown:
    _check(rho, p, W)
    v, dx = rho.values, rho.grid.dx
    h_m = float((v**p.m).sum() * dx / (p.m - 1))
    quad = float(p.beta * (v * v).sum() * dx)
    return EnergyBreakdown.from_terms(h_m, quad, interaction_energy(rho, W, p.chi))


def limit_energy(rho: Density, p: Params) -> float:
    """``1/(m-1) int rho^m - (chi - 2 beta)/2 int rho^2``."""
    v, dx = rho.values, rho.grid.dx
    return float((v**p.m).sum() * dx / (p.m - 1) - p.gamma * (v * v).sum() * dx)


def theta(p: Params) -> float:
    """Interpolation exponent with ``||rho||_{2d/(d+2s)}^2 <= M^{2-2 theta} ||rho||_m^{2 theta}``."""
    return (p.d - 2 * p.s) * p.m / (2 * p.d * (p.m - 1))


def cbar(p: Params) -> float:
    """Optimal Young constant: ``A y^{2 theta} <= cbar + y^m / (2(m-1))`` for all ``y >= 0``."""
    th, m = theta(p), p.m
    A = 0.5 * p.chi * sds_constant(p.d, p.s) * p.mass ** (2 - 2 * th)
    return (
        (m - 2 * th)
        / m
        * (m / (4 * th * (m - 1))) ** (-2 * th / (m - 2 * th))
        * A ** (m / (m - 2 * th))
    )


@dataclass(frozen=True)
class BoundReport:
    theta: float
    cbar: float
    lhs: float
    """``||rho||_m^m / (2(m-1))``"""
    rhs: float
    """``F_s[rho] + cbar``"""
    hls_lhs: float
    """``|W_s[rho]|``"""
    hls_rhs: float
    """``chi/2 S_{d,s} M^{2-2 theta} ||rho||_m^{2 theta}``"""
    satisfied: bool


def lower_bound_check(rho: Density, p: Params, W: KernelWeights) -> BoundReport:
    """Evaluate both sides of the entropy lower bound and of the HLS chain.

    A violation is reported through ``satisfied``; it is never raised.
    """
    e = free_energy(rho, p, W)
    th, cb = theta(p), cbar(p)
    norm_m = lp_norm(rho, p.m)
    lhs = norm_m**p.m / (2 * (p.m - 1))
    rhs = e.total + cb
    hls_rhs = 0.5 * p.chi * sds_constant(p.d, p.s) * rho.mass ** (2 - 2 * th) * norm_m ** (2 * th)
    ok = lhs <= rhs and abs(e.w_s) <= hls_rhs
    return BoundReport(th, cb, lhs, rhs, abs(e.w_s), hls_rhs, bool(ok))


def write_energy_csv(path: str | Path, times: Iterable[float], energies: Iterable[EnergyBreakdown]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "h_m", "quad", "w_s", "total"])
        for t, e in zip(times, energies):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in (e.h_m, e.quad, e.w_s, e.total)])


def read_energy_csv(path: str | Path) -> tuple[np.ndarray, list[EnergyBreakdown]]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], [EnergyBreakdown(*row[1:]) for row in data]
