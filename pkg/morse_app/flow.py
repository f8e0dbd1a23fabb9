"""Integration of the λ-flow and of the fast flow (λ = 0).

The state is augmented with the running energy ∫‖p′‖² dt so the energy
identity can be checked to integration tolerance. Every accepted step is
inspected for basin entry, escape in η, monotonicity of the Lyapunov value
and passages near saddles.
"""
import enum
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import RK45
from scipy.interpolate import CubicHermiteSpline

from .exceptions import BudgetExceeded, NotFound, StepFailure
from .field import F_value, Problem, hess_F, hess_f_eta, torus_delta, wrap_angles

logger = logging.getLogger(__name__)

MONOTONE_TOL = 1e-9


class TerminalKind(str, enum.Enum):
    CONVERGED = 'converged'
    ESCAPE_PLUS = 'escape_plus_eta'
    ESCAPE_MINUS = 'escape_minus_eta'
    UNDETERMINED = 'undetermined'


@dataclass(frozen=True)
class Terminal:
    kind: TerminalKind
    target: Optional[str] = None

    def __str__(self):
        if self.kind is TerminalKind.CONVERGED:
            return f"converged:{self.target}"
        return self.kind.value

    @property
    def converged(self):
        return self.kind is TerminalKind.CONVERGED


@dataclass(frozen=True)
class Budget:
    max_time: float
    max_steps: int

    @classmethod
    def from_tolerances(cls, tol):
        return cls(max_time=tol.max_time, max_steps=tol.max_steps)

    @classmethod
    def for_scan(cls, tol):
        """Step cap for label shots; exhausted shots are retried with the full budget."""
        return cls(max_time=tol.max_time, max_steps=min(tol.scan_max_steps, tol.max_steps))

    def scaled(self, factor):
        return Budget(self.max_time * factor, int(self.max_steps * factor))


@dataclass(frozen=True, eq=False)
class Equilibrium:
    """A rest point the integrator watches: basin, unstable/stable data."""

    id: str
    x: np.ndarray
    eta: float
    basin_radius: float
    converge_radius: float
    unstable_dim: int
    dim: int
    unstable_vec: Optional[np.ndarray] = None
    stable_vec: Optional[np.ndarray] = None
    degenerate: bool = False

    def state(self):
        if self.dim == 3:
            return np.array([self.x[0], self.x[1], self.eta])
        return np.array(self.x, dtype=float)

    def effective(self, reverse):
        """(unstable dimension, unstable vector) for the flow direction used."""
        if not reverse:
            return self.unstable_dim, self.unstable_vec
        return self.dim - self.unstable_dim, self.stable_vec


@dataclass(frozen=True)
class Passage:
    """A visit to the basin ball of a saddle: exit side and closest approach."""

    id: str
    side: int
    min_distance: float
    offset: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    lam: float
    t: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    energy: np.ndarray
    terminal: Terminal
    F_start: float
    F_end: float
    passages: tuple = ()
    monotone_violations: int = 0
    min_speed_outside: float = float('inf')
    failure: Optional[str] = None

    @property
    def energy_spent(self):
        return float(self.energy[-1])

    @property
    def samples(self):
        from .field import ExtendedPoint
        return [(float(t), ExtendedPoint.from_array(y)) for t, y in zip(self.t, self.y)]

    @property
    def points(self):
        """Samples as (N, 3) with x reduced mod 2π."""
        out = np.array(self.y, dtype=float)
        out[:, :2] = wrap_angles(out[:, :2])
        return out

    @property
    def eta_range(self):
        return float(np.min(self.y[:, 2])), float(np.max(self.y[:, 2]))

    def energy_residual(self, value_end=None):
        """|energy_spent − (F_start − F_end)|, F_end replaced by value_end when given."""
        end = self.F_end if value_end is None else value_end
        return abs(self.energy_spent - (self.F_start - end))

    def truncated(self, n):
        """First n samples (n ≥ 1)."""
        n = max(1, int(n))
        return replace(self, t=self.t[:n], y=self.y[:n], dy=self.dy[:n], energy=self.energy[:n])

    def closest_index(self, target):
        d = state_distance(self.y, np.asarray(target, dtype=float))
        return int(np.argmin(d))

    def resample(self, max_gap):
        """Dense points by cubic Hermite interpolation between accepted steps."""
        if len(self.t) < 2:
            return self.y.copy()
        spline = CubicHermiteSpline(self.t, self.y, self.dy, axis=0)
        pieces = [self.y[:1]]
        for i in range(len(self.t) - 1):
            gap = np.linalg.norm(self.y[i + 1] - self.y[i])
            m = int(np.ceil(gap / max_gap))
            if m > 1:
                ts = np.linspace(self.t[i], self.t[i + 1], m + 1)[1:]
                pieces.append(spline(ts))
            else:
                pieces.append(self.y[i + 1:i + 2])
        return np.vstack(pieces)

    def csv_rows(self, problem):
        values = F_value(problem, self.y) if self.y.shape[1] == 3 else None
        for i, (t, y) in enumerate(zip(self.t, self.y)):
            yield [t, y[0], y[1], y[2], values[i] if values is not None else float('nan'), self.energy[i]]


def state_distance(a, b):
    """Distance with toroidal x components; η (third column) is euclidean."""
    a = np.asarray(a, dtype=float)
    d = torus_delta(a[..., :2], b[..., :2])
    total = np.sum(d * d, axis=-1)
    if a.shape[-1] == 3 and np.shape(b)[-1] == 3:
        total = total + (a[..., 2] - b[..., 2]) ** 2
    return np.sqrt(total)


class FlowField:
    """Joint evaluation of ∇f, μ and ∇μ from one set of phases."""

    def __init__(self, problem: Problem):
        f, mu = problem.f, problem.mu
        self.k = np.vstack([f.wavevectors, mu.wavevectors]).astype(float)
        self.nf = len(f.wavevectors)
        self.fa, self.fb = f.cos_coeffs, f.sin_coeffs
        self.ma, self.mb = mu.cos_coeffs, mu.sin_coeffs

    def parts(self, x):
        phase = self.k @ x
        c, s = np.cos(phase), np.sin(phase)
        nf = self.nf
        gf = (-self.fa * s[:nf] + self.fb * c[:nf]) @ self.k[:nf]
        gm = (-self.ma * s[nf:] + self.mb * c[nf:]) @ self.k[nf:]
        mu = c[nf:] @ self.ma + s[nf:] @ self.mb
        return gf, gm, mu

    def lambda_rhs(self, lam):
        lam2 = lam * lam

        def rhs(t, y):
            gf, gm, mu = self.parts(y[:2])
            vx = -(gf + y[2] * gm)
            veta = -lam2 * mu
            return np.array([vx[0], vx[1], veta, vx @ vx + lam2 * mu * mu])
        return rhs

    def fast_rhs(self, eta, sign=1.0):
        def rhs(t, y):
            gf, gm, _ = self.parts(y[:2])
            v = -sign * (gf + eta * gm)
            return np.array([v[0], v[1], v @ v])
        return rhs


def lambda_equilibria(problem: Problem, crit, lam) -> List[Equilibrium]:
    """Watched rest points of the λ-flow: the critical points of F."""
    g_half = np.diag([1.0, 1.0, lam])
    out = []
    for p in crit:
        hess = hess_F(problem, p.x, p.eta)
        s_eigs, w = np.linalg.eigh(g_half @ hess @ g_half)
        vecs = g_half @ w
        vecs /= np.linalg.norm(vecs, axis=0)
        unstable = [vecs[:, i] for i in range(3) if s_eigs[i] < 0]
        stable = [vecs[:, i] for i in range(3) if s_eigs[i] > 0]
        out.append(Equilibrium(
            id=p.id, x=p.x, eta=p.eta,
            basin_radius=problem.tol.basin_factor * float(np.min(np.abs(p.hessian_eigs))),
            converge_radius=problem.tol.converge_tol,
            unstable_dim=len(unstable), dim=3,
            unstable_vec=unstable[0] if len(unstable) == 1 else None,
            stable_vec=stable[0] if len(stable) == 1 else None,
        ))
    return out


def fast_equilibrium(problem: Problem, point_id, x, eta) -> Equilibrium:
    """Watched rest point of the fast flow at fixed η."""
    eigs, vecs = np.linalg.eigh(hess_f_eta(problem, np.asarray(x, dtype=float), eta))
    neg = [vecs[:, i] for i in range(2) if eigs[i] < 0]
    pos = [vecs[:, i] for i in range(2) if eigs[i] > 0]
    return Equilibrium(
        id=point_id, x=wrap_angles(x), eta=float(eta),
        basin_radius=problem.tol.basin_factor * float(np.min(np.abs(eigs))),
        converge_radius=problem.tol.converge_tol,
        unstable_dim=len(neg), dim=2,
        unstable_vec=neg[0] if len(neg) == 1 else None,
        stable_vec=pos[0] if len(pos) == 1 else None,
    )


def fold_equilibrium(problem: Problem, fold) -> Equilibrium:
    return Equilibrium(
        id=fold.id, x=np.array(fold.point.x), eta=fold.eta,
        basin_radius=problem.tol.fold_capture_radius,
        converge_radius=problem.tol.fold_converge_tol,
        unstable_dim=fold.lower_index, dim=2, degenerate=True,
    )


def default_fast_equilibria(problem: Problem, eta) -> List[Equilibrium]:
    from .critical import find_critical_points
    pts = find_critical_points(problem.f_eta(eta))
    return [fast_equilibrium(problem, f"e{i}", p.x, eta) for i, p in enumerate(pts)]


class _Watch:
    """Per-equilibrium bookkeeping while stepping."""

    __slots__ = ('eq', 'target', 'radius', 'udim', 'uvec', 'inside', 'skip',
                 'min_d', 'offset', 'decreasing', 'last_d', 'steps_in')

    def __init__(self, eq, reverse, start_state):
        self.eq = eq
        self.target = eq.state()
        self.radius = eq.basin_radius
        self.udim, self.uvec = eq.effective(reverse)
        d0 = float(state_distance(start_state, self.target))
        self.inside = d0 < self.radius
        self.skip = self.inside
        self.min_d = d0
        self.offset = 0.0
        self.decreasing = 0
        self.last_d = d0
        self.steps_in = 0

    def unstable_component(self, state):
        delta = np.concatenate([torus_delta(state[:2], self.target[:2]), state[2:3] - self.target[2:3]]) \
            if len(self.target) == 3 else torus_delta(state[:2], self.target[:2])
        return float(delta @ self.uvec) if self.uvec is not None else 0.0


def _run(problem, rhs, y0, lam, eta_fixed, watches, budget, value_fn, reverse, rtol, atol, capture=False):
    dim = len(y0) - 1
    eta_max = problem.eta_max if problem.eta_max is not None else float('inf')
    K = problem.tol.contraction_steps
    solver = RK45(rhs, 0.0, np.asarray(y0, dtype=float), budget.max_time, rtol=rtol, atol=atol)
    ts, ys, dys = [0.0], [solver.y.copy()], [np.asarray(rhs(0.0, solver.y))]
    values = [value_fn(solver.y[:dim])]
    passages, violations = [], 0
    min_speed = float('inf')
    terminal, failure = Terminal(TerminalKind.UNDETERMINED), None
    sign = -1.0 if reverse else 1.0
    targets = np.array([w.target for w in watches]) if watches else None
    steps = 0
    while steps < budget.max_steps:
        solver.step()
        steps += 1
        if solver.status == 'failed':
            failure = f"StepFailure at t={solver.t:.6g}: step size controller could not meet tolerance"
            logger.warning(failure)
            break
        state = solver.y[:dim]
        ts.append(solver.t)
        ys.append(solver.y.copy())
        dys.append(np.asarray(solver.f, dtype=float))
        values.append(value_fn(state))
        if sign * (values[-1] - values[-2]) > MONOTONE_TOL:
            violations += 1
        if dim == 3 and state[2] > eta_max:
            terminal = Terminal(TerminalKind.ESCAPE_PLUS)
            break
        if dim == 3 and state[2] < -eta_max:
            terminal = Terminal(TerminalKind.ESCAPE_MINUS)
            break
        outside = True
        dists = state_distance(targets, state) if targets is not None else ()
        for w, d in zip(watches, dists):
            d = float(d)
            if d < w.radius:
                outside = False
                w.steps_in += 1
                w.decreasing = w.decreasing + 1 if d < w.last_d else 0
                if not w.skip and w.uvec is not None and d < w.min_d:
                    w.min_d, w.offset = d, w.unstable_component(state)
                w.inside = True
                if d <= w.eq.converge_radius and w.decreasing >= min(K, w.steps_in):
                    terminal = Terminal(TerminalKind.CONVERGED, w.eq.id)
                elif capture and w.udim == 0 and not w.eq.degenerate and not w.skip and d < w.last_d:
                    # the basin ball of a nondegenerate sink is forward invariant
                    terminal = Terminal(TerminalKind.CONVERGED, w.eq.id)
            elif w.inside:
                if not w.skip and w.udim == 1 and not w.eq.degenerate:
                    side = 1 if w.unstable_component(state) >= 0 else -1
                    passages.append(Passage(w.eq.id, side, w.min_d, w.offset))
                w.inside, w.skip, w.decreasing, w.steps_in = False, False, 0, 0
                w.min_d = float('inf')
            w.last_d = d
        if outside:
            min_speed = min(min_speed, float(np.linalg.norm(solver.f[:dim])))
        if terminal.converged or solver.status == 'finished':
            break
    for w in watches:
        if w.inside and not w.skip and w.udim == 1 and not w.eq.degenerate and not terminal.converged:
            side = 1 if w.unstable_component(ys[-1][:dim]) >= 0 else -1
            passages.append(Passage(w.eq.id, side, w.min_d, w.offset))
    if violations:
        logger.warning(f"Lyapunov value increased on {violations} accepted steps")
    y = np.array(ys)
    dy = np.array(dys)
    if dim == 2:
        y = np.column_stack([y[:, :2], np.full(len(y), eta_fixed), y[:, 2]])
        dy = np.column_stack([dy[:, :2], np.zeros(len(dy)), dy[:, 2]])
    return Trajectory(
        lam=lam, t=np.array(ts), y=y[:, :3], dy=dy[:, :3], energy=y[:, 3],
        terminal=terminal, F_start=values[0], F_end=values[-1], passages=tuple(passages),
        monotone_violations=violations, min_speed_outside=min_speed, failure=failure,
    )


def _stationary(start, watches, lam, eta_fixed, value):
    for w in watches:
        if float(state_distance(start, w.target)) <= 1e-12:
            y = np.array([[start[0], start[1], start[2] if len(start) == 3 else eta_fixed]])
            return Trajectory(
                lam=lam, t=np.zeros(1), y=y, dy=np.zeros((1, 3)), energy=np.zeros(1),
                terminal=Terminal(TerminalKind.CONVERGED, w.eq.id), F_start=value, F_end=value)
    return None


def integrate(problem: Problem, lam: float, start, budget: Optional[Budget] = None,
              equilibria: Optional[Sequence[Equilibrium]] = None, rtol=None, atol=None,
              capture=False) -> Trajectory:
    """Integrate x' = −(∇f + η∇μ), η' = −λ²μ from start until a terminal event."""
    if equilibria is None:
        from .critical import find_crit_F
        equilibria = lambda_equilibria(problem, find_crit_F(problem), lam)
    start = np.asarray(start.as_array() if hasattr(start, 'as_array') else start, dtype=float)
    budget = budget or Budget.from_tolerances(problem.tol)
    watches = [_Watch(eq, False, start) for eq in equilibria]
    value_fn = lambda s: float(F_value(problem, s))  # noqa: E731
    hit = _stationary(start, watches, lam, None, value_fn(start))
    if hit is not None:
        return hit
    rhs = FlowField(problem).lambda_rhs(lam)
    return _run(problem, rhs, np.append(start, 0.0), lam, None, watches, budget, value_fn,
                False, rtol or problem.tol.rtol, atol or problem.tol.atol, capture)


def fast_integrate(problem: Problem, eta: float, x_start, budget: Optional[Budget] = None,
                   equilibria: Optional[Sequence[Equilibrium]] = None, reverse=False,
                   rtol=None, atol=None, capture=False) -> Trajectory:
    """Integrate the fast flow x' = −∇f_η(x) with η held fixed.

    With reverse=True the time-reversed flow is integrated and the returned
    trajectory is re-ordered so it runs forward in time, ending at x_start.
    capture=True stops as soon as a nondegenerate sink's basin ball is
    entered; enough for labels, not for witnesses.
    """
    if equilibria is None:
        equilibria = default_fast_equilibria(problem, eta)
    start = np.asarray(x_start, dtype=float)[:2]
    budget = budget or Budget.from_tolerances(problem.tol)
    watches = [_Watch(eq, reverse, start) for eq in equilibria]
    f_eta = problem.f_eta(eta)
    value_fn = lambda s: float(f_eta.eval(s))  # noqa: E731
    hit = _stationary(start, watches, 0.0, eta, value_fn(start))
    if hit is not None:
        return hit
    rhs = FlowField(problem).fast_rhs(eta, -1.0 if reverse else 1.0)
    traj = _run(problem, rhs, np.append(start, 0.0), 0.0, eta, watches, budget, value_fn,
                reverse, rtol or problem.tol.rtol, atol or problem.tol.atol, capture)
    return _reversed(traj) if reverse else traj


def _reversed(traj: Trajectory) -> Trajectory:
    t_end = traj.t[-1]
    energy = traj.energy[-1] - traj.energy[::-1]
    return replace(
        traj, t=(t_end - traj.t)[::-1], y=traj.y[::-1].copy(), dy=-traj.dy[::-1],
        energy=energy, F_start=traj.F_end, F_end=traj.F_start,
    )


def settled(traj: Trajectory, redo, context) -> Trajectory:
    """traj, or redo() when traj ran out of budget.

    Raises StepFailure when the step controller gave up and BudgetExceeded
    when the rerun is still undetermined.
    """
    for attempt in range(2):
        if traj.failure:
            raise StepFailure(f"{context}: {traj.failure}")
        if traj.terminal.kind is not TerminalKind.UNDETERMINED:
            return traj
        if attempt == 0:
            logger.warning(f"{context}: shot undetermined after {len(traj.t) - 1} steps, retrying")
            traj = redo()
    raise BudgetExceeded(f"{context}: shot still undetermined after a retry with a larger budget",
                         steps=len(traj.t) - 1, time=float(traj.t[-1]))


def classify_terminal(problem: Problem, traj: Trajectory, equilibria: Sequence[Equilibrium]) -> Terminal:
    """Re-derive the terminal tag of an integrated trajectory from its samples."""
    last = traj.y[-1]
    eta_max = problem.eta_max if problem.eta_max is not None else float('inf')
    if traj.lam > 0 or np.any(np.diff(traj.y[:, 2]) != 0):
        if last[2] > eta_max:
            return Terminal(TerminalKind.ESCAPE_PLUS)
        if last[2] < -eta_max:
            return Terminal(TerminalKind.ESCAPE_MINUS)
    K = problem.tol.contraction_steps
    for eq in equilibria:
        target = eq.state()
        samples = traj.y if eq.dim == 3 else traj.y[:, :2]
        d = state_distance(samples, target)
        if d[-1] <= eq.converge_radius:
            if len(d) == 1:
                return Terminal(TerminalKind.CONVERGED, eq.id)
            inside = d < eq.basin_radius
            run = 0
            for i in range(len(d) - 1, 0, -1):
                if not inside[i] or d[i] >= d[i - 1]:
                    break
                run += 1
            if run >= min(K, int(np.sum(inside)) - 1):
                return Terminal(TerminalKind.CONVERGED, eq.id)
    return Terminal(TerminalKind.UNDETERMINED)


def decay_exponent(t, dist):
    """Exponent α of a power-law approach dist ~ (t − t0)^(−α).

    Uses |d dist/dt| ∝ dist^((α+1)/α), which needs no estimate of t0;
    exponential approach gives slope 1 and α = inf. nan when fewer than
    five decreasing samples are available.
    """
    t = np.asarray(t, dtype=float)
    dist = np.asarray(dist, dtype=float)
    if len(t) < 5:
        return float('nan')
    rate = -np.gradient(dist, t)
    mask = (dist > 0) & (rate > 0)
    if np.sum(mask) < 5:
        return float('nan')
    slope, _ = np.polyfit(np.log(dist[mask]), np.log(rate[mask]), 1)
    if slope <= 1.0 + 1e-9:
        return float('inf')
    return float(1.0 / (slope - 1.0))


def separatrices(problem: Problem, eta: float, eq: Equilibrium, equilibria=None, reverse=False,
                 radius=None, budget=None) -> List[Trajectory]:
    """Both fast trajectories leaving a saddle along its unstable eigenvector.

    With reverse=True the stable eigenvector is used and the trajectories
    are integrated backward; each then ends at the saddle and its terminal
    names the rest point reached in backward time. Order is (+side, −side).
    """
    vec = eq.stable_vec if reverse else eq.unstable_vec
    if vec is None:
        raise NotFound(f"{eq.id} has no one-dimensional {'stable' if reverse else 'unstable'} direction")
    r = radius or problem.tol.shooting_radius
    return [
        fast_integrate(problem, eta, np.asarray(eq.x) + sgn * r * vec, budget, equilibria, reverse=reverse)
        for sgn in (1.0, -1.0)
    ]
