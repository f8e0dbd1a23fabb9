"""Exit-offset scaling of the planar fold normal form

    z1' = -z2 + z1², z2' = -ε

started on the attracting branch; the offset ρ at the section z1 = δ
should scale like ε^(2/3).
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .exceptions import ConfigError, NoExit

logger = logging.getLogger(__name__)

START = (-1.0, 1.0)
DEFAULT_EPSILONS = (1e-2, 1e-3, 1e-4, 1e-5)
DEFAULT_DELTA = 0.5


@dataclass(frozen=True)
class FoldRun:
    epsilon: float
    rho: float
    delta: float
    exit_time: float

    def to_json(self):
        return {'epsilon': self.epsilon, 'rho': self.rho, 'delta': self.delta, 'exit_time': self.exit_time}


@dataclass
class FoldScaling:
    slope: float
    intercept: float
    runs: List[FoldRun]

    def csv_rows(self):
        return np.array([[r.epsilon, r.rho] for r in self.runs])

    def to_json(self):
        return {'slope': self.slope, 'intercept': self.intercept, 'runs': [r.to_json() for r in self.runs]}


def fold_run(epsilon: float, delta: float = DEFAULT_DELTA, rtol=1e-10, atol=1e-13) -> FoldRun:
    if epsilon <= 0:
        raise NoExit(f"epsilon={epsilon:g}: the start lies on the curve of equilibria z1 = -sqrt(z2)")

    def rhs(t, z):
        return [-z[1] + z[0] * z[0], -epsilon]

    def section(t, z):
        return z[0] - delta
    section.terminal = True
    section.direction = 1

    # z2 reaches -1 well after the jump, so 3/ε bounds the exit time
    sol = solve_ivp(rhs, (0.0, 3.0 / epsilon), START, method='LSODA', events=section, rtol=rtol, atol=atol)
    if not sol.t_events[0].size:
        raise NoExit(f"epsilon={epsilon:g}: no crossing of z1 = {delta:g} ({sol.message})")
    z = sol.y_events[0][0]
    rho = -float(z[1])
    if rho <= 0:
        raise NoExit(f"epsilon={epsilon:g}: section crossed before the fold (z2={z[1]:.3e})")
    return FoldRun(float(epsilon), rho, float(delta), float(sol.t_events[0][0]))


def fold_scaling(epsilons: Sequence[float] = DEFAULT_EPSILONS, delta: float = DEFAULT_DELTA) -> FoldScaling:
    """Regress log ρ on log ε over a decreasing ladder of ε."""
    epsilons = [float(e) for e in epsilons]
    if len(epsilons) < 2 or any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ConfigError(f"epsilons must be strictly decreasing with at least two entries, got {epsilons}")
    if not 0.05 <= delta <= 0.5:
        raise ConfigError(f"delta must lie in [0.05, 0.5], got {delta}")
    runs = [fold_run(e, delta) for e in epsilons]
    slope, intercept = np.polyfit(np.log([r.epsilon for r in runs]), np.log([r.rho for r in runs]), 1)
    logger.info(f"Fold scaling: slope {slope:.4f} over {len(runs)} runs (delta={delta:g})")
    return FoldScaling(float(slope), float(intercept), runs)
