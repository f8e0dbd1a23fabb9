"""Connecting orbits of the λ-flow as two-point boundary value problems.

Away from λ ≈ 1 every orbit between critical points of F shadows a
normally hyperbolic set: μ⁻¹(0) for large λ, the fast-slow orbits for
small λ. Exit angles on the unstable circle then shrink far below double
precision and shooting cannot resolve them. Collocation never integrates
across the instability: the orbit is posed on rescaled time s = t/T ∈ [0, 1]
with its start on the unstable plane of p, its end on the stable plane of q
and (θ, φ, T) as unknowns. Seeds come from the two singular limits.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_bvp

from .field import F_value, Problem, TWO_PI, grad_F, hess_F, torus_delta, zeta
from .flow import Terminal, TerminalKind, Trajectory, state_distance

logger = logging.getLogger(__name__)

SEED_NODES = 400
SUBDIVIDE = 8
MONOTONE_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class Seed:
    """Approximate p → q orbit taken from a singular limit."""

    p: str
    q: str
    points: np.ndarray
    origin: str


@dataclass(frozen=True, eq=False)
class CollocatedOrbit:
    theta: float
    witness: Trajectory
    residual: float
    origin: str


def eigenplane(problem: Problem, point, lam, unstable=True):
    """Unstable (or stable) eigenvectors of the λ-flow at a critical point of F, as columns."""
    g_half = np.diag([1.0, 1.0, lam])
    s_eigs, w = np.linalg.eigh(g_half @ hess_F(problem, point.x, point.eta) @ g_half)
    vecs = g_half @ w[:, s_eigs < 0 if unstable else s_eigs > 0]
    return vecs / np.linalg.norm(vecs, axis=0)


def _angle(plane, direction):
    a, b = np.linalg.lstsq(plane, direction, rcond=None)[0]
    return float(np.arctan2(b, a))


def _on_plane(center, plane, radius, angle):
    return center + radius * (np.cos(angle) * plane[:, 0] + np.sin(angle) * plane[:, 1])


def lift_path(points, x0):
    """Polyline with continuous x, starting from the lift closest to x0."""
    pts = np.array(points, dtype=float)
    steps = torus_delta(pts[1:, :2], pts[:-1, :2])
    first = np.asarray(x0, dtype=float) + torus_delta(pts[0, :2], x0)
    pts[:, :2] = first + np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    return pts


def _interior(pts, p_state, q_state, trim):
    d_p = state_distance(pts, p_state)
    d_q = state_distance(pts, q_state)
    away = np.nonzero(d_p > trim)[0]
    before = np.nonzero(d_q > trim)[0]
    if not len(away) or not len(before) or before[-1] <= away[0]:
        return None
    inner = pts[away[0]:before[-1] + 1]
    if len(inner) > SEED_NODES:
        inner = inner[np.unique(np.linspace(0, len(inner) - 1, SEED_NODES).round().astype(int))]
    return inner


def _end_time(problem, lam, point, center, radius):
    """Time the linear flow needs between radius and the first seed node."""
    d = float(state_distance(point, center))
    rate = float(np.linalg.norm(grad_F(problem, point, lam))) / max(d, 1e-300)
    return np.log(max(d / radius, 1.0 + 1e-9)) / max(rate, 1e-12)


def initial_guess(problem: Problem, lam, p, q, seed: Seed, radius, unstable, stable):
    """(s mesh, states (3, m), [θ, φ, T], q lifted) from a seed, or None if the seed is too short.

    Seed nodes inside the end balls are dropped; time between nodes is
    arclength over λ-flow speed, and the two end pieces use the local
    exponential rate.
    """
    pts = lift_path(seed.points, p.x)
    p_state = p.as_array()
    q_state = q.as_array()
    q_state[:2] = pts[-1, :2] + torus_delta(q_state[:2], pts[-1, :2])
    inner = _interior(pts, p_state, q_state, 10 * radius)
    if inner is None or len(inner) < 2:
        return None
    theta = _angle(unstable, inner[0] - p_state)
    phi = _angle(stable, inner[-1] - q_state)
    speed = np.maximum(np.linalg.norm(grad_F(problem, inner, lam), axis=1), 1e-12)
    gaps = np.linalg.norm(np.diff(inner, axis=0), axis=1) / (0.5 * (speed[1:] + speed[:-1]))
    t0 = _end_time(problem, lam, inner[0], p_state, radius)
    t1 = _end_time(problem, lam, inner[-1], q_state, radius)
    t = np.concatenate([[0.0], t0 + np.concatenate([[0.0], np.cumsum(gaps)])])
    t = np.append(t, t[-1] + t1)
    states = np.vstack([_on_plane(p_state, unstable, radius, theta), inner,
                        _on_plane(q_state, stable, radius, phi)])
    keep = np.concatenate([[True], np.diff(t) > 1e-12 * t[-1]])
    s = t[keep] / t[-1]
    return s, states[keep].T, np.array([theta, phi, t[-1]]), q_state


def _witness(problem, lam, sol, q, p_state, q_state, radius):
    frac = np.arange(SUBDIVIDE) / SUBDIVIDE
    s = np.append((sol.x[:-1, None] + np.diff(sol.x)[:, None] * frac).ravel(), 1.0)
    T = float(sol.p[2])
    y = sol.sol(s).T
    v = grad_F(problem, y, lam)
    t = s * T
    metric_speed = np.sum(v[:, :2] ** 2, axis=1) + (v[:, 2] / lam) ** 2
    energy = cumulative_trapezoid(metric_speed, t, initial=0.0)
    values = F_value(problem, y)
    outside = (state_distance(y, p_state) > 10 * radius) & (state_distance(y, q_state) > 10 * radius)
    speeds = np.linalg.norm(v, axis=1)[outside]
    return Trajectory(
        lam=lam, t=t, y=y, dy=v, energy=energy, terminal=Terminal(TerminalKind.CONVERGED, q.id),
        F_start=float(values[0]), F_end=float(values[-1]),
        min_speed_outside=float(np.min(speeds)) if len(speeds) else float('inf'),
    )


def _rejection(problem, traj, p, q, crit):
    values = F_value(problem, traj.y)
    if np.any(np.diff(values) > MONOTONE_SLACK * max(1.0, abs(float(values[0])))):
        return 'F increases along the solution'
    if problem.eta_max is not None and np.max(np.abs(traj.y[:, 2])) > problem.eta_max:
        return f"|eta| exceeds eta_max = {problem.eta_max:.6g}"
    for c in crit:
        if c.id in (p.id, q.id):
            continue
        if float(np.min(state_distance(traj.y, c.as_array()))) < problem.tol.attribution_tol:
            return f"solution passes through {c.id}"
    return None


def solve_connection(problem: Problem, lam, p, q, seed: Seed, crit=()) -> Optional[CollocatedOrbit]:
    """Collocate the p → q orbit near seed; None when the solver does not converge to one."""
    tol = problem.tol
    radius = tol.collocation_radius
    unstable = eigenplane(problem, p, lam)
    stable = eigenplane(problem, q, lam, unstable=False)
    guess = initial_guess(problem, lam, p, q, seed, radius, unstable, stable)
    if guess is None:
        logger.debug(f"Seed {seed.origin} {p.id}->{q.id} has no interior beyond the end balls")
        return None
    s, states, params, q_state = guess
    p_state = p.as_array()

    def fun(_, y, par):
        return par[2] * grad_F(problem, y.T, lam).T

    def bc(ya, yb, par):
        return np.concatenate([ya - _on_plane(p_state, unstable, radius, par[0]),
                               yb - _on_plane(q_state, stable, radius, par[1])])

    sol = solve_bvp(fun, bc, s, states, p=params, tol=tol.collocation_tol, max_nodes=tol.collocation_max_nodes)
    if sol.status != 0 or sol.p[2] <= 0:
        logger.debug(f"Collocation {p.id}->{q.id} from {seed.origin} seed failed: {sol.message}")
        return None
    traj = _witness(problem, lam, sol, q, p_state, q_state, radius)
    reason = _rejection(problem, traj, p, q, crit)
    if reason:
        logger.debug(f"Collocated {p.id}->{q.id} rejected: {reason}")
        return None
    return CollocatedOrbit(float(np.mod(sol.p[0], TWO_PI)), traj, float(np.max(sol.rms_residuals)), seed.origin)


def arc_seeds(problem: Problem, geometry, bijection) -> List[Seed]:
    """Large-λ seeds: arcs of μ⁻¹(0) between neighbouring restricted critical points, at η = ζ(x)."""
    by_restricted = {r: c for c, r in bijection.items()}
    seeds = []
    for ci, comp in enumerate(geometry.components):
        ring = geometry.crit_on(ci)
        n = len(comp)
        for i, r in enumerate(ring):
            if r.index != 1:
                continue
            start = _nearest(comp, r.x)
            for step, nb in ((-1, ring[i - 1]), (1, ring[(i + 1) % len(ring)])):
                count = (step * (_nearest(comp, nb.x) - start)) % n or n
                xs = comp[(start + step * np.arange(count + 1)) % n].copy()
                xs[0], xs[-1] = r.x, nb.x
                etas = [zeta(problem, x) for x in xs]
                seeds.append(Seed(by_restricted[r.id], by_restricted[nb.id], np.column_stack([xs, etas]),
                                  'level-set'))
    return seeds


def _nearest(component, x):
    return int(np.argmin(np.linalg.norm(torus_delta(component, np.asarray(x)), axis=1)))


def fast_slow_seeds(sequences) -> List[Seed]:
    """Small-λ seeds: images of the fast-slow orbits, keyed like the λ = 0 complex witnesses."""
    return [Seed(seq.p, seq.q, seq.image(), 'fast-slow') for seqs in sequences.values() for seq in seqs]


def seeds_for(problem: Problem, lam, geometry=None, bijection=None, sequences=None) -> List[Seed]:
    """Seeds from whichever singular limit is close at this λ."""
    tol = problem.tol
    seeds = []
    if lam >= tol.arc_seed_lambda and geometry is not None and bijection:
        seeds += arc_seeds(problem, geometry, bijection)
    if lam <= tol.fast_slow_seed_lambda and sequences:
        seeds += fast_slow_seeds(sequences)
    logger.debug(f"lambda={lam:g}: {len(seeds)} collocation seeds")
    return seeds


def collocate(args):
    problem, lam, p, q, seed, crit = args
    return solve_connection(problem, lam, p, q, seed, crit)
