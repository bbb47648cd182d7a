"""
Radially decreasing data need not stay radially decreasing
===========================================================

Symmetric, nonincreasing-in-|x| initial data may develop interior bumps
under the flow with ``beta = 0``. Two data show it within the first few
thousandths of a time unit:

* a unit mass plateau plus two small mollified spikes at its edges,
* the indicator of ``[-1.5, 1.5]`` with height 1/4 (too wide for its mass).

A discrete steady state is the control: it stays monotone.
"""

import numpy as np

from aggdiff.evolution import breach_amount, evolve, monotonicity_breach
from aggdiff.grid import Grid, Params, indicator, mollified_counterexample
from aggdiff.steady import discrete_steady_state

p = Params(m=3.0, beta=0.0, chi=1.0, s=0.1)
grid = Grid(4.0, 1024)
outputs = list(np.arange(1, 201) * 0.005)


def first_breach(rho0, stop_early=True):
    stop = (lambda t, rho: breach_amount(rho) > 1e-9) if stop_early else None
    traj = evolve(p, rho0, 1.0, outputs, stop=stop)
    return monotonicity_breach(traj), traj


# %% the two counterexamples
for name, rho0 in [
    ("mollified spikes", mollified_counterexample(grid, 0.1, 4.0)),
    ("wide indicator", indicator(grid, -1.5, 1.5, 0.25)),
]:
    t, traj = first_breach(rho0)
    print(f"{name:>17}: breach at t = {t}  (rise {breach_amount(traj.final):.2e})")

# %% the control run
control = discrete_steady_state(p, grid).rho
t, traj = first_breach(control, stop_early=False)
change = np.max(np.abs(traj.final.values - control.values))
print(f"{'steady control':>17}: breach = {t}, max change over [0, 1] = {change:.1e}")
