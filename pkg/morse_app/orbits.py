"""Connecting orbits of the λ-flow, the fast-flow catalog at λ = 0 and the
fast-slow orbits built from it.

Shooting is label based: every trajectory is reduced to its itinerary (the
saddles it passed and on which side of their stable manifold it left, then
its terminal). A connection to a saddle sits where two neighbouring labels
first disagree at that saddle; bisection pins the parameter down and the
closest approach decides attribution.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .collocation import Seed, collocate, eigenplane
from .critical import CritPointF, SlowType, confinement_bound, find_crit_F, special_eta_gap
from .exceptions import (
    AmbiguousDecay, ConfigError, GraphInconsistency, NonRegularLambda, NotFound,
)
from .field import (
    F_value, Problem, TWO_PI, extended_distance, torus_tree, tree_query_points, wrap_angles,
)
from .flow import (
    Budget, Trajectory, decay_exponent, fast_equilibrium, fast_integrate, fold_equilibrium, integrate,
    lambda_equilibria, separatrices, settled, state_distance,
)
from .slow import (
    EndpointKind, FoldPoint, Marker, MarkerKind, SlowBranch, branch_by_id, points_at_eta,
    trace_slow_manifold, x_at,
)
from .utils import parallel_map

logger = logging.getLogger(__name__)

DECAY_BAND = (0.7, 1.3)
ETA_MATCH = 1e-9


def itinerary(traj: Trajectory):
    """Label of a trajectory: (saddle, side) per passage, then the terminal."""
    events = [(p.id, p.side) for p in traj.passages]
    if traj.terminal.converged:
        events.append((traj.terminal.target, 0))
    else:
        events.append((traj.terminal.kind.value, 0))
    return tuple(events)


def _event_distances(traj: Trajectory):
    out = [p.min_distance for p in traj.passages]
    out.append(0.0 if traj.terminal.converged else float('inf'))
    return out


def _event_offsets(traj: Trajectory):
    out = [p.offset for p in traj.passages]
    out.append(0.0)
    return out


def distance_to(traj: Trajectory, ident):
    """Closest recorded approach of a trajectory to the rest point ident."""
    if traj.terminal.converged and traj.terminal.target == ident:
        return 0.0
    return min((p.min_distance for p in traj.passages if p.id == ident), default=float('inf'))


def attribute(ta: Trajectory, tb: Trajectory, limit_for):
    """Saddle responsible for the label change between two neighbouring trajectories.

    Returns (saddle id or None, closest approach, position in the itinerary).
    """
    ea, eb = itinerary(ta), itinerary(tb)
    k = next((i for i, (a, b) in enumerate(zip(ea, eb)) if a != b), min(len(ea), len(eb)))
    if k >= len(ea) or k >= len(eb) or ea[k][0] != eb[k][0]:
        return None, float('inf'), k
    ident = ea[k][0]
    limit = limit_for(ident)
    closest = max(_event_distances(ta)[k], _event_distances(tb)[k])
    if limit is None or closest >= limit:
        return None, closest, k
    return ident, closest, k


def _bisect(evaluate, a, b, ta, tb, tol):
    la, lb = itinerary(ta), itinerary(tb)
    pending, samples = [], [(a, ta), (b, tb)]
    while b - a > tol:
        m = 0.5 * (a + b)
        tm = evaluate(m)
        samples.append((m, tm))
        lm = itinerary(tm)
        if lm != la and lm != lb:
            pending.append((m, b, tm, tb))
            b, tb, lb = m, tm, lm
        elif lm == la:
            a, ta = m, tm
        else:
            b, tb = m, tm
    return (a, b, ta, tb), pending, samples


def scan_changes(evaluate, params, trajs, tol, period=None):
    """Brackets of width ≤ tol around every label change along a sampled parameter.

    trajs entries may be None (sample skipped); changes are only sought
    between consecutive evaluated samples.
    """
    evaluated = [(t, tr) for t, tr in zip(params, trajs) if tr is not None]
    pairs = list(zip(evaluated[:-1], evaluated[1:]))
    if period is not None and len(evaluated) > 1:
        last, first = evaluated[-1], evaluated[0]
        pairs.append((last, (first[0] + period, first[1])))
    brackets = [(a, b, ta, tb) for (a, ta), (b, tb) in pairs if itinerary(ta) != itinerary(tb)]
    results = []
    while brackets:
        bracket, pending, samples = _bisect(evaluate, *brackets.pop(), tol)
        brackets.extend(pending)
        results.append((bracket, samples))
    results.sort(key=lambda r: r[0][0])
    return results


def _margin(samples, center, ident, limit, bracket):
    near = [abs(t - center) for t, tr in samples if distance_to(tr, ident) < limit]
    return max(near) if near else bracket[1] - bracket[0]


@dataclass(frozen=True, eq=False)
class Connection:
    """An isolated connecting orbit, located by shooting or by collocation."""

    source: str
    target: str
    parameter: float
    margin: Optional[float]
    closest: float
    witness: Trajectory
    slope: float = float('nan')
    method: str = 'shooting'

    def to_json(self):
        return {
            'source': self.source,
            'target': self.target,
            'parameter': self.parameter,
            'margin': self.margin,
            'closest': self.closest,
            'energy': self.witness.energy_spent,
            'min_speed': self.witness.min_speed_outside,
            'method': self.method,
        }


def confined(problem: Problem, crit, folds=()):
    """Problem with eta_max fixed, defaulting to the confinement bound."""
    if problem.eta_max is not None:
        return problem
    bound = confinement_bound(problem, crit, folds)
    logger.debug(f"Using confinement bound eta_max = {bound:.6g}")
    return problem.with_eta_max(bound)


def _shoot(args):
    problem, lam, start, equilibria, rtol, atol, budget = args
    return integrate(problem, lam, start, budget=budget, equilibria=equilibria, rtol=rtol, atol=atol)


def _attribution_radius(crit):
    if len(crit) < 2:
        return float('inf')
    pts = np.array([p.as_array() for p in crit])
    d = extended_distance(pts[:, None, :], pts[None, :, :])
    return 0.5 * float(np.min(d[np.triu_indices(len(crit), 1)]))


def _check_collisions(found, tol, period=None):
    params = sorted(c.parameter for c in found)
    gaps = np.diff(params) if len(params) > 1 else np.array([])
    if period is not None and len(params) > 1:
        gaps = np.append(gaps, params[0] + period - params[-1])
    if np.any(gaps < 10 * tol):
        raise NonRegularLambda(f"Connection parameters collide within {10 * tol:g}", parameters=params)


def _check_speed(problem: Problem, conn: Connection, lam):
    speed = conn.witness.min_speed_outside
    if speed < problem.tol.speed_floor:
        logger.warning(f"Witness {conn.source}->{conn.target} (lambda={lam:g}) slows to {speed:.3e} "
                       f"away from every rest point")


def shoot_unstable_circle(problem: Problem, lam: float, p: CritPointF, crit: Sequence[CritPointF],
                          equilibria=None, workers=1) -> List[Connection]:
    """All λ-flow connections from an index-2 critical point that angle shooting resolves."""
    if lam <= 0:
        raise ConfigError(f"Boundary counting needs lambda > 0, got {lam}")
    problem = confined(problem, crit)
    tol = problem.tol
    if equilibria is None:
        equilibria = lambda_equilibria(problem, crit, lam)
    plane = eigenplane(problem, p, lam)
    if plane.shape[1] != 2:
        raise ConfigError(f"{p.id} has index {plane.shape[1]}; angle shooting needs an index-2 point")
    eq_by_id = {eq.id: eq for eq in equilibria}
    radius = _attribution_radius(crit)
    budget = Budget.from_tolerances(tol)

    def limit_for(ident):
        eq = eq_by_id.get(ident)
        if eq is None or eq.unstable_dim != 1:
            return None
        return min(tol.attribution_tol, radius, 0.5 * eq.basin_radius)

    def start(theta):
        return p.as_array() + tol.shooting_radius * (np.cos(theta) * plane[:, 0] + np.sin(theta) * plane[:, 1])

    def task(theta, scale=1):
        return problem, lam, start(theta), equilibria, tol.scan_rtol, tol.atol, budget.scaled(scale)

    def evaluate(theta):
        return settled(_shoot(task(theta)), lambda: _shoot(task(theta, 4)),
                       f"{p.id} at angle {theta:.12g}, lambda={lam:g}")

    angles = tol.angle_offset + TWO_PI * np.arange(tol.n_angles) / tol.n_angles
    grid = parallel_map(_shoot, [task(a) for a in angles], workers)
    grid = [settled(tr, lambda a=a: _shoot(task(a, 4)), f"{p.id} at angle {a:.12g}, lambda={lam:g}")
            for a, tr in zip(angles, grid)]
    found = []
    for bracket, samples in scan_changes(evaluate, angles, grid, tol.angle_tol, period=TWO_PI):
        a, b, ta, tb = bracket
        ident, closest, _ = attribute(ta, tb, limit_for)
        if ident is None:
            continue
        theta = float(np.mod(0.5 * (a + b), TWO_PI))
        margin = _margin(samples, 0.5 * (a + b), ident, limit_for(ident), bracket)
        best = a if distance_to(ta, ident) <= distance_to(tb, ident) else b
        traj = integrate(problem, lam, start(best), equilibria=equilibria)
        witness = traj.truncated(traj.closest_index(eq_by_id[ident].state()) + 1)
        if margin < 10 * tol.angle_tol:
            logger.warning(f"Near-zero transversality margin {margin:.3e} for {p.id}->{ident} at lambda={lam:g}")
        if np.max(np.abs(witness.y[:, 2])) >= problem.eta_max - 1:
            logger.warning(f"Witness {p.id}->{ident} reaches |eta| >= eta_max - 1")
        conn = Connection(p.id, ident, theta, margin, closest, witness)
        _check_speed(problem, conn, lam)
        found.append(conn)
    _check_collisions(found, tol.angle_tol, TWO_PI)
    logger.info(f"lambda={lam:g}: shooting resolved {len(found)} connections from {p.id}")
    return found


def same_orbit(a: Trajectory, b: Trajectory, tol):
    return hausdorff(a.resample(0.02), b.resample(0.02)) < tol


def connections_from(problem: Problem, lam: float, p: CritPointF, crit: Sequence[CritPointF],
                     equilibria=None, workers=1, seeds: Sequence[Seed] = ()) -> Dict[str, List[Connection]]:
    """Connections leaving p keyed by target: shooting first, then collocation from seeds.

    Collocated orbits that shooting already found are dropped. Raises NotFound
    when p had seeds, every one of them failed and shooting resolved nothing,
    rather than reporting an empty row of the boundary matrix.
    """
    problem = confined(problem, crit)
    by_id = {c.id: c for c in crit}
    out: Dict[str, List[Connection]] = {}
    shot = shoot_unstable_circle(problem, lam, p, crit, equilibria, workers)
    for c in shot:
        out.setdefault(c.target, []).append(c)
    own = [s for s in seeds if s.p == p.id and s.q in by_id]
    results = parallel_map(collocate, [(problem, lam, p, by_id[s.q], s, crit) for s in own], workers)
    failed = 0
    for seed, orbit in zip(own, results):
        if orbit is None:
            failed += 1
            logger.warning(f"lambda={lam:g}: {seed.origin} seed {seed.p}->{seed.q} did not converge")
            continue
        known = out.setdefault(seed.q, [])
        if any(same_orbit(orbit.witness, c.witness, problem.tol.orbit_match_tol) for c in known):
            continue
        conn = Connection(p.id, seed.q, orbit.theta, None, problem.tol.collocation_radius, orbit.witness,
                          method='collocation')
        _check_speed(problem, conn, lam)
        known.append(conn)
    if own and failed == len(own) and not shot:
        raise NotFound(f"No connection from {p.id} at lambda={lam:g}: shooting resolved none "
                       f"and all {failed} collocation seeds failed", lam=lam)
    return {q: found for q, found in out.items() if found}


def count_boundary_lambda(problem: Problem, lam: float, p: CritPointF, q: CritPointF,
                          crit=None, workers=1, seeds: Sequence[Seed] = ()) -> Tuple[int, List[Trajectory]]:
    """Mod-2 number of λ-flow orbits from p to q, with their witnesses."""
    if p.index_F != q.index_F + 1:
        raise ConfigError(f"Indices of {p.id} ({p.index_F}) and {q.id} ({q.index_F}) are not adjacent")
    if q.F >= p.F:
        return 0, []
    crit = crit if crit is not None else find_crit_F(problem)
    own = [s for s in seeds if s.q == q.id]
    hits = connections_from(problem, lam, p, crit, workers=workers, seeds=own).get(q.id, [])
    return len(hits) % 2, [c.witness for c in hits]


def boundary_lambda(problem: Problem, lam: float, crit: Sequence[CritPointF], workers=1,
                    seeds: Sequence[Seed] = ()):
    """Connections for every adjacent pair, keyed by (p id, q id)."""
    problem = confined(problem, crit)
    equilibria = lambda_equilibria(problem, crit, lam)
    out: Dict[Tuple[str, str], List[Connection]] = {}
    targets = {q.id for q in crit if q.index_F == 1}
    for p in crit:
        if p.index_F != 2:
            continue
        for q, found in connections_from(problem, lam, p, crit, equilibria, workers, seeds).items():
            if q in targets:
                out[(p.id, q)] = found
    return out


# Fast flow catalog

@dataclass(frozen=True, eq=False)
class HandleSlide:
    id: str
    eta: float
    source_branch: str
    target_branch: str
    source_x: tuple
    target_x: tuple
    side: int
    slope: float
    witness: Trajectory

    @property
    def tangential(self):
        return not np.isfinite(self.slope)

    def to_json(self):
        return {
            'id': self.id,
            'eta': self.eta,
            'source_branch': self.source_branch,
            'target_branch': self.target_branch,
            'source_x': list(self.source_x),
            'target_x': list(self.target_x),
            'side': self.side,
            'slope': self.slope,
            'energy': self.witness.energy_spent,
        }


class Direction(str, enum.Enum):
    INTO = 'into_fold'
    OUT = 'out_of_fold'


@dataclass(frozen=True, eq=False)
class CuspOrbit:
    fold: str
    partner: str
    partner_x: tuple
    direction: Direction
    eta: float
    decay: float
    witness: Trajectory
    center_jump: bool = False

    @property
    def fast_kind(self):
        return 'fold-jump' if self.center_jump and self.direction is Direction.OUT else 'cusp'

    def to_json(self):
        return {
            'fold': self.fold,
            'partner': self.partner,
            'partner_x': list(self.partner_x),
            'direction': self.direction.value,
            'eta': self.eta,
            'decay': self.decay,
            'center_jump': self.center_jump,
        }


class JumpKind(str, enum.Enum):
    INITIAL = 'initial'
    FINAL = 'final'


@dataclass(frozen=True, eq=False)
class Jump:
    """Fast orbit leaving p ∈ Crit⁺ (initial) or arriving at q ∈ Crit⁻ (final)."""

    crit: str
    kind: JumpKind
    branch: str
    eta: float
    x: tuple
    witness: Trajectory

    def to_json(self):
        return {'crit': self.crit, 'kind': self.kind.value, 'branch': self.branch,
                'eta': self.eta, 'x': list(self.x)}


def fast_equilibria_at(problem: Problem, branches, eta):
    """Fast equilibria at η named after the branches they lie on."""
    return [fast_equilibrium(problem, b.id, x, eta) for b, x in points_at_eta(problem, branches, eta)]


def _fast_shot(args):
    problem, eta, start, equilibria, reverse, rtol, budget, capture = args
    return fast_integrate(problem, eta, start, budget=budget, equilibria=equilibria, reverse=reverse, rtol=rtol,
                          capture=capture)


def _saddle_start(eq, side, radius):
    return np.asarray(eq.x) + side * radius * eq.unstable_vec


def detect_handle_slides(problem: Problem, branches: Sequence[SlowBranch], folds=(), workers=1) -> List[HandleSlide]:
    """Saddle-to-saddle fast orbits, found by scanning η along every saddle branch."""
    tol = problem.tol
    saddles = [b for b in branches if b.fast_index == 1]
    found = []
    for a in saddles:
        partners = [b for b in saddles if b is not a and b.eta_lo < a.eta_hi and a.eta_lo < b.eta_hi]
        if not partners:
            continue
        lo = max(a.eta_lo, min(b.eta_lo for b in partners))
        hi = min(a.eta_hi, max(b.eta_hi for b in partners))
        etas = np.linspace(lo, hi, tol.eta_scan + 2)[1:-1]
        setups = {}
        for eta in etas:
            eqs = fast_equilibria_at(problem, branches, eta)
            source = next((e for e in eqs if e.id == a.id), None)
            f_eta = problem.f_eta(eta)
            below = [e for e in eqs if e.id != a.id and e.unstable_dim == 1
                     and f_eta.eval(e.x) < f_eta.eval(source.x)] if source is not None else []
            if below and source.unstable_vec is not None:
                setups[float(eta)] = (source, eqs)
        if not setups:
            logger.debug(f"Handle-slide prefilter removed every eta sample of {a.id}")
            continue
        for side in (1, -1):
            found.extend(_scan_saddle_side(problem, branches, a, side, etas, setups, workers))
    found.sort(key=lambda hs: (hs.eta, hs.source_branch, hs.target_branch))
    slides = [HandleSlide(id=f"hs{i}", **{k: getattr(hs, k) for k in (
        'eta', 'source_branch', 'target_branch', 'source_x', 'target_x', 'side', 'slope', 'witness')})
        for i, hs in enumerate(found)]
    logger.info(f"Detected {len(slides)} handle-slides")
    return slides


def _runs(keys, setups):
    """Maximal runs of consecutive η samples that see the same set of fast equilibria."""
    runs = []
    for eta in keys:
        ids = frozenset(e.id for e in setups[eta][1])
        if runs and runs[-1][0] == ids:
            runs[-1][1].append(eta)
        else:
            runs.append((ids, [eta]))
    return [run for _, run in runs]


def _near_saddle(traj, eqs, source_id, radius):
    for e in eqs:
        if e.id != source_id and e.unstable_dim == 1:
            if float(np.min(state_distance(traj.y[:, :2], e.x))) < radius:
                return True
    return False


def _scan_saddle_side(problem: Problem, branches, a, side, etas, setups, workers):
    """Handle-slides leaving saddle branch a on one side of its unstable direction.

    Every eta_scan_stride-th sample is shot first. The samples between two
    coarse shots are only filled in when the labels differ or either shot
    passes within proximity_tol of another saddle. Bisection never crosses a
    fold because it runs inside groups of samples with the same equilibria.
    """
    tol = problem.tol
    radius = tol.shooting_radius
    scan_budget = Budget.for_scan(tol)

    def shot_at(eta, source, eqs, budget=scan_budget):
        return _fast_shot((problem, eta, _saddle_start(source, side, radius), eqs, False, tol.scan_rtol,
                           budget, True))

    def shoot(keys):
        tasks = [(problem, eta, _saddle_start(setups[eta][0], side, radius), setups[eta][1], False,
                  tol.scan_rtol, scan_budget, True) for eta in keys]
        trajs = parallel_map(_fast_shot, tasks, workers)
        return {eta: settled(tr, lambda eta=eta: shot_at(eta, *setups[eta], budget=Budget.from_tolerances(tol)),
                             f"fast shot from {a.id} at eta={eta:.12g}")
                for eta, tr in zip(keys, trajs)}

    def evaluate(eta):
        eqs = fast_equilibria_at(problem, branches, eta)
        source = next(e for e in eqs if e.id == a.id)
        return settled(shot_at(eta, source, eqs), lambda: shot_at(eta, source, eqs, Budget.from_tolerances(tol)),
                       f"fast shot from {a.id} at eta={eta:.12g}")

    stride = max(1, tol.eta_scan_stride)
    runs = _runs([float(eta) for eta in etas if float(eta) in setups], setups)
    coarse = []
    for run in runs:
        picks = run[::stride]
        if picks[-1] != run[-1]:
            picks.append(run[-1])
        coarse.append(picks)
    shots = shoot([eta for picks in coarse for eta in picks])
    fill = []
    for run, picks in zip(runs, coarse):
        for lo, hi in zip(picks[:-1], picks[1:]):
            ta, tb = shots[lo], shots[hi]
            if (itinerary(ta) != itinerary(tb) or _near_saddle(ta, setups[lo][1], a.id, tol.proximity_tol)
                    or _near_saddle(tb, setups[hi][1], a.id, tol.proximity_tol)):
                fill.extend(eta for eta in run if lo < eta < hi)
    shots.update(shoot(fill))
    logger.debug(f"{a.id} side {side:+d}: {len(shots)} of {len(etas)} eta samples shot")

    out = []
    for run in runs:
        keys = [eta for eta in run if eta in shots]
        for bracket, _ in scan_changes(evaluate, keys, [shots[eta] for eta in keys], tol.eta_root_tol):
            slide = _resolve_slide(problem, branches, a, side, bracket)
            if slide is not None:
                out.append(slide)
    return out


def _resolve_slide(problem: Problem, branches, a, side, bracket):
    tol = problem.tol
    lo, hi, ta, tb = bracket
    eq_by_id = {e.id: e for e in fast_equilibria_at(problem, branches, lo)}

    def limit_for(ident):
        eq = eq_by_id.get(ident)
        if eq is None or ident == a.id or eq.unstable_dim != 1:
            return None
        return min(tol.attribution_tol, 0.5 * eq.basin_radius)

    ident, closest, k = attribute(ta, tb, limit_for)
    if ident is None:
        return None
    eta = 0.5 * (lo + hi)
    slope = (_event_offsets(tb)[k] - _event_offsets(ta)[k]) / max(hi - lo, 1e-300)
    if abs(slope) < tol.transversality_tol:
        logger.warning(f"TangentialConnection: handle-slide {a.id}->{ident} at eta={eta:.10g} "
                       f"has splitting slope {slope:.3e}")
    best = lo if distance_to(ta, ident) <= distance_to(tb, ident) else hi
    eqs = fast_equilibria_at(problem, branches, best)
    source = next(e for e in eqs if e.id == a.id)
    target = next(e for e in eqs if e.id == ident)
    traj = fast_integrate(problem, best, _saddle_start(source, side, tol.shooting_radius), equilibria=eqs)
    witness = traj.truncated(traj.closest_index(target.state()) + 1)
    return HandleSlide(
        id='', eta=eta, source_branch=a.id, target_branch=ident,
        source_x=tuple(map(float, source.x)), target_x=tuple(map(float, target.x)),
        side=side, slope=float(slope), witness=witness,
    )


def annotate_handle_slides(branches: Sequence[SlowBranch], slides: Sequence[HandleSlide]):
    """Branches with HandleSlideEndpoint markers added at both ends of every slide."""
    extra = {b.id: [] for b in branches}
    for hs in slides:
        for ref in (hs.source_branch, hs.target_branch):
            extra[ref].append(Marker(MarkerKind.HANDLE_SLIDE, hs.id, hs.eta))
    return [b.with_markers(extra[b.id]) for b in branches]


def _fold_decay(traj: Trajectory, fold: FoldPoint, backward, radius):
    d = state_distance(traj.y[:, :2], fold.x)
    t = traj.t
    if backward:
        t, d = (traj.t[-1] - traj.t)[::-1], d[::-1]
    mask = d < radius
    return decay_exponent(t[mask], d[mask])


def _checked_decay(problem: Problem, traj, fold, backward):
    radius = problem.tol.fold_capture_radius
    for _ in range(3):
        alpha = _fold_decay(traj, fold, backward, radius)
        if DECAY_BAND[0] <= alpha <= DECAY_BAND[1]:
            return alpha
        radius /= 10
    raise AmbiguousDecay(f"Approach to {fold.id} does not fit a 1/t law (exponent {alpha})")


def _center_jump(problem: Problem, fold: FoldPoint, eqs, sign):
    delta = problem.tol.fold_delta
    for _ in range(3):
        start = fold.x + sign * delta * fold.v
        traj = fast_integrate(problem, fold.eta, start, equilibria=eqs, reverse=sign < 0)
        if traj.terminal.converged and traj.terminal.target != fold.id:
            return traj
        delta /= 10
    logger.warning(f"Center-direction jump from {fold.id} did not land on a rest point")
    return None


def detect_cusp_orbits(problem: Problem, fold: FoldPoint, branches: Sequence[SlowBranch]) -> List[CuspOrbit]:
    """Fast orbits into and out of a fold, including the jump along its center direction."""
    eta = fold.eta
    present = {b.id: (b, x) for b, x in points_at_eta(problem, branches, eta)}
    eqs = fast_equilibria_at(problem, branches, eta) + [fold_equilibrium(problem, fold)]
    eq_by_id = {e.id: e for e in eqs}
    saddles = [eq_by_id[bid] for bid, (b, _) in present.items() if b.fast_index == 1]
    out = []
    if fold.lower_index == 0:
        jump = _center_jump(problem, fold, eqs, 1)
        if jump is not None:
            target = jump.terminal.target
            out.append(CuspOrbit(fold.id, target, tuple(map(float, eq_by_id[target].x)), Direction.OUT, eta,
                                 float('nan'), jump, center_jump=True))
        for eq in saddles:
            for traj in separatrices(problem, eta, eq, eqs):
                if traj.terminal.target != fold.id:
                    continue
                try:
                    alpha = _checked_decay(problem, traj, fold, backward=False)
                except AmbiguousDecay as e:
                    logger.warning(f"{e}; candidate from {eq.id} skipped")
                    continue
                out.append(CuspOrbit(fold.id, eq.id, tuple(map(float, eq.x)), Direction.INTO, eta, alpha, traj))
    else:
        jump = _center_jump(problem, fold, eqs, -1)
        if jump is not None:
            source = jump.terminal.target
            out.append(CuspOrbit(fold.id, source, tuple(map(float, eq_by_id[source].x)), Direction.INTO, eta,
                                 float('nan'), jump, center_jump=True))
        for eq in saddles:
            for traj in separatrices(problem, eta, eq, eqs, reverse=True):
                if traj.terminal.target != fold.id:
                    continue
                try:
                    alpha = _checked_decay(problem, traj, fold, backward=True)
                except AmbiguousDecay as e:
                    logger.warning(f"{e}; candidate into {eq.id} skipped")
                    continue
                out.append(CuspOrbit(fold.id, eq.id, tuple(map(float, eq.x)), Direction.OUT, eta, alpha, traj))
    logger.debug(f"{fold.id}: {len(out)} cusp orbits")
    return out


def _own_branch(problem: Problem, point: CritPointF, branches):
    for b in branches:
        if any(m.kind is MarkerKind.CRIT and m.ref == point.id for m in b.markers):
            return b
    raise NotFound(f"No branch carries critical point {point.id}")


def crit_jumps(problem: Problem, point: CritPointF, branches: Sequence[SlowBranch]) -> List[Jump]:
    """Initial jumps from an attractor, final jumps into a repeller."""
    eta = point.eta
    own = _own_branch(problem, point, branches)
    eqs = fast_equilibria_at(problem, branches, eta)
    eq_by_id = {e.id: e for e in eqs}
    if own.id not in eq_by_id:
        raise NotFound(f"{point.id} is not strictly inside branch {own.id}")
    saddles = [e for e in eqs if e.unstable_dim == 1 and e.id != own.id]
    jumps = []
    if point.slow_type is SlowType.ATTRACTOR:
        if point.fast_index == 1:
            for traj in separatrices(problem, eta, eq_by_id[own.id], eqs):
                if traj.terminal.converged and eq_by_id[traj.terminal.target].unstable_dim == 0:
                    target = eq_by_id[traj.terminal.target]
                    jumps.append(Jump(point.id, JumpKind.INITIAL, target.id, eta, tuple(map(float, target.x)), traj))
        elif point.fast_index == 2:
            for eq in saddles:
                for traj in separatrices(problem, eta, eq, eqs, reverse=True):
                    if traj.terminal.target == own.id:
                        jumps.append(Jump(point.id, JumpKind.INITIAL, eq.id, eta, tuple(map(float, eq.x)), traj))
    else:
        if point.fast_index == 0:
            for eq in saddles:
                for traj in separatrices(problem, eta, eq, eqs):
                    if traj.terminal.target == own.id:
                        jumps.append(Jump(point.id, JumpKind.FINAL, eq.id, eta, tuple(map(float, eq.x)), traj))
        elif point.fast_index == 1:
            for traj in separatrices(problem, eta, eq_by_id[own.id], eqs, reverse=True):
                if traj.terminal.converged and eq_by_id[traj.terminal.target].unstable_dim == 2:
                    source = eq_by_id[traj.terminal.target]
                    jumps.append(Jump(point.id, JumpKind.FINAL, source.id, eta, tuple(map(float, source.x)), traj))
    return jumps


@dataclass(frozen=True, eq=False)
class Catalog:
    """Everything the λ = 0 graph search needs, immutable once built."""

    crit: tuple
    branches: tuple
    folds: tuple
    handle_slides: tuple
    cusp_orbits: tuple
    jumps: tuple
    eta_max: float

    def crit_by_id(self, ident):
        return next(p for p in self.crit if p.id == ident)

    def fold_by_id(self, ident):
        return next(f for f in self.folds if f.id == ident)

    def branch(self, ident):
        return branch_by_id(self.branches, ident)

    def special_etas(self):
        return sorted([p.eta for p in self.crit] + [f.eta for f in self.folds]
                      + [hs.eta for hs in self.handle_slides])

    def to_json(self):
        return {
            'eta_max': self.eta_max,
            'crit': [p.to_json() for p in self.crit],
            'branches': [b.to_json() for b in self.branches],
            'folds': [f.to_json() for f in self.folds],
            'handle_slides': [hs.to_json() for hs in self.handle_slides],
            'cusp_orbits': [c.to_json() for c in self.cusp_orbits],
            'jumps': [j.to_json() for j in self.jumps],
            'special_etas': self.special_etas(),
            'special_eta_gap': special_eta_gap(self.special_etas()),
        }


def build_catalog(problem: Problem, crit=None, slow_result=None, workers=1, handle_slides=None) -> Catalog:
    crit = list(crit) if crit is not None else find_crit_F(problem)
    branches, folds = slow_result if slow_result is not None else trace_slow_manifold(problem, crit)
    problem = confined(problem, crit, folds)
    if handle_slides is None:
        handle_slides = detect_handle_slides(problem, branches, folds, workers)
    slides = list(handle_slides)
    branches = annotate_handle_slides(branches, slides)
    cusps = [c for fold in folds for c in detect_cusp_orbits(problem, fold, branches)]
    jumps = [j for p in crit for j in crit_jumps(problem, p, branches)]
    logger.info(f"Catalog: {len(branches)} branches, {len(folds)} folds, {len(slides)} handle-slides, "
                f"{len(cusps)} cusp orbits, {len(jumps)} jumps")
    return Catalog(tuple(crit), tuple(branches), tuple(folds), tuple(slides), tuple(cusps), tuple(jumps),
                   problem.eta_max)


# Fast-slow orbits

@dataclass(frozen=True)
class RestPoint:
    kind: str
    ref: str
    eta: float
    x: tuple
    F: float

    @property
    def key(self):
        return (self.kind, self.ref, round(self.eta, 10))

    def to_json(self):
        return {'kind': self.kind, 'ref': self.ref, 'eta': self.eta, 'x': list(self.x), 'F': self.F}


@dataclass(frozen=True, eq=False)
class Segment:
    kind: str
    fast_kind: Optional[str] = None
    branch: Optional[str] = None
    direction: int = 0
    ref: Optional[str] = None
    witness: Optional[Trajectory] = None
    points: Optional[np.ndarray] = None

    @property
    def trivial(self):
        return self.kind == 'slow' and self.direction == 0

    def to_json(self):
        return {'kind': self.kind, 'fast_kind': self.fast_kind, 'branch': self.branch,
                'direction': self.direction, 'ref': self.ref}


CASE_PARITY = {'I': ('fast', 0), 'II': ('fast', 1), 'III': ('slow', 1), 'IV': ('slow', 0)}


@dataclass(frozen=True, eq=False)
class FastSlowOrbitSeq:
    p: str
    q: str
    rests: tuple
    segments: tuple
    case_tag: str

    @property
    def n(self):
        return len(self.segments)

    @property
    def signature(self):
        return tuple(r.key for r in self.rests) + tuple((s.kind, s.ref, s.branch) for s in self.segments)

    def parity_ok(self):
        odd_kind, n_parity = CASE_PARITY[self.case_tag]
        odd = [s.kind for i, s in enumerate(self.segments) if i % 2 == 0]
        even = [s.kind for i, s in enumerate(self.segments) if i % 2 == 1]
        other = 'slow' if odd_kind == 'fast' else 'fast'
        return (all(k == odd_kind for k in odd) and all(k == other for k in even)
                and self.n % 2 == n_parity and not self.segments[0].trivial and not self.segments[-1].trivial)

    def image(self):
        pieces = [s.points for s in self.segments if s.points is not None and len(s.points)]
        return np.vstack(pieces) if pieces else np.array([r_point(r) for r in self.rests])

    def to_json(self):
        return {
            'p': self.p,
            'q': self.q,
            'case': self.case_tag,
            'rests': [r.to_json() for r in self.rests],
            'segments': [s.to_json() for s in self.segments],
        }


def r_point(rest: RestPoint):
    return np.array([rest.x[0], rest.x[1], rest.eta])


def _rest(problem: Problem, kind, ref, x, eta):
    x = wrap_angles(x)
    return RestPoint(kind, ref, float(eta), (float(x[0]), float(x[1])),
                     float(F_value(problem, np.array([x[0], x[1], eta]))))


def case_tag(p: CritPointF, q: CritPointF):
    if p.slow_type is SlowType.ATTRACTOR:
        return 'I' if q.slow_type is SlowType.ATTRACTOR else 'II'
    return 'III' if q.slow_type is SlowType.ATTRACTOR else 'IV'


class _Graph:
    """Edges of the λ = 0 search between rest points of the catalog."""

    def __init__(self, problem: Problem, catalog: Catalog, p: CritPointF, q: CritPointF):
        self.problem = problem
        self.catalog = catalog
        self.p, self.q = p, q
        self.departures = {}
        for hs in catalog.handle_slides:
            self.departures.setdefault(hs.source_branch, []).append(hs.eta)
        for c in catalog.cusp_orbits:
            if c.direction is Direction.INTO:
                self.departures.setdefault(c.partner, []).append(c.eta)
        for j in catalog.jumps:
            if j.kind is JumpKind.FINAL and j.crit == q.id:
                self.departures.setdefault(j.branch, []).append(j.eta)

    def start(self):
        return _rest(self.problem, 'crit', self.p.id, self.p.x, self.p.eta)

    def fast_edges(self, rest: RestPoint):
        cat, pb = self.catalog, self.problem
        if rest.kind == 'crit' and rest.ref == self.p.id:
            for j in cat.jumps:
                if j.kind is JumpKind.INITIAL and j.crit == self.p.id:
                    yield Segment('fast', 'initial-jump', ref=f"{j.crit}:{j.branch}", witness=j.witness), \
                        _rest(pb, 'branch', j.branch, j.x, j.eta)
        elif rest.kind == 'branch':
            for hs in cat.handle_slides:
                if hs.source_branch == rest.ref and abs(hs.eta - rest.eta) < ETA_MATCH:
                    yield Segment('fast', 'handle-slide', ref=hs.id, witness=hs.witness), \
                        _rest(pb, 'branch', hs.target_branch, hs.target_x, hs.eta)
            for c in cat.cusp_orbits:
                if c.direction is Direction.INTO and c.partner == rest.ref and abs(c.eta - rest.eta) < ETA_MATCH:
                    fold = cat.fold_by_id(c.fold)
                    yield Segment('fast', c.fast_kind, ref=f"{c.fold}<-{c.partner}", witness=c.witness), \
                        _rest(pb, 'fold', fold.id, fold.x, fold.eta)
            for j in cat.jumps:
                if (j.kind is JumpKind.FINAL and j.crit == self.q.id and j.branch == rest.ref
                        and abs(j.eta - rest.eta) < ETA_MATCH):
                    yield Segment('fast', 'final-jump', ref=f"{j.branch}:{j.crit}", witness=j.witness), \
                        _rest(pb, 'crit', self.q.id, self.q.x, self.q.eta)
        elif rest.kind == 'fold':
            for c in cat.cusp_orbits:
                if c.direction is Direction.OUT and c.fold == rest.ref:
                    yield Segment('fast', c.fast_kind, ref=f"{c.fold}->{c.partner}", witness=c.witness), \
                        _rest(pb, 'branch', c.partner, c.partner_x, c.eta)

    def _slow_starts(self, rest: RestPoint):
        """(branch, η0, direction) pairs a regular slow segment may start with."""
        cat = self.catalog
        if rest.kind == 'crit':
            b = _own_branch(self.problem, self.p, cat.branches)
            return [(b, rest.eta, 1), (b, rest.eta, -1)]
        if rest.kind == 'fold':
            fold = cat.fold_by_id(rest.ref)
            out = []
            for b in cat.branches:
                if b.fast_index != fold.lower_index + 1:
                    continue
                if b.lo.kind is EndpointKind.FOLD and b.lo.ref == fold.id:
                    out.append((b, b.eta_lo, 1))
                if b.hi.kind is EndpointKind.FOLD and b.hi.ref == fold.id:
                    out.append((b, b.eta_hi, -1))
            return out
        b = cat.branch(rest.ref)
        velocity = -float(self.problem.mu.eval(np.array(rest.x)))
        return [(b, rest.eta, 1 if velocity > 0 else -1)]

    def slow_edges(self, rest: RestPoint):
        pb = self.problem
        for b, eta0, direction in self._slow_starts(rest):
            barriers = [m.eta for m in b.crit_markers if direction * (m.eta - eta0) > ETA_MATCH]
            end = b.eta_hi if direction > 0 else b.eta_lo
            stop = min(barriers, key=lambda e: abs(e - eta0)) if barriers else end
            if abs(stop - eta0) <= ETA_MATCH:
                continue
            mid = 0.5 * (eta0 + stop)
            if -direction * float(pb.mu.eval(x_at(pb, b, mid))) <= 0:
                continue
            for eta in sorted(self.departures.get(b.id, [])):
                if direction * (eta - eta0) > ETA_MATCH and direction * (stop - eta) > ETA_MATCH:
                    yield self._slow(b, eta0, eta, direction), _rest(pb, 'branch', b.id, x_at(pb, b, eta), eta)
            if barriers:
                marker = next(m for m in b.crit_markers if m.eta == stop)
                if marker.ref == self.q.id and self.q.slow_type is SlowType.ATTRACTOR:
                    yield self._slow(b, eta0, stop, direction), _rest(pb, 'crit', self.q.id, self.q.x, self.q.eta)
            else:
                endpoint = b.hi if direction > 0 else b.lo
                if endpoint.kind is EndpointKind.FOLD:
                    fold = self.catalog.fold_by_id(endpoint.ref)
                    if b.fast_index == fold.lower_index:
                        yield self._slow(b, eta0, stop, direction), _rest(pb, 'fold', fold.id, fold.x, fold.eta)

    def _slow(self, branch: SlowBranch, eta0, eta1, direction):
        lo, hi = sorted((eta0, eta1))
        nodes = branch.nodes[(branch.nodes[:, 2] > lo) & (branch.nodes[:, 2] < hi)]
        ends = []
        for eta in (lo, hi):
            ends.append(np.concatenate([x_at(self.problem, branch, eta), [eta]]))
        pts = np.vstack([ends[0][None, :], nodes, ends[1][None, :]])
        if direction < 0:
            pts = pts[::-1]
        pts = pts.copy()
        pts[:, :2] = wrap_angles(pts[:, :2])
        return Segment('slow', branch=branch.id, direction=direction,
                       ref=f"{branch.id}[{eta0:.12g},{eta1:.12g}]", points=pts)


def _fast_points(segment: Segment):
    pts = segment.witness.resample(0.02)
    pts[:, :2] = wrap_angles(pts[:, :2])
    return pts


def enumerate_fast_slow(problem: Problem, p: CritPointF, q: CritPointF, catalog: Catalog) -> List[FastSlowOrbitSeq]:
    """All fast-slow orbits from p to q allowed by alternation, regularity and case parity."""
    if p.index_F != q.index_F + 1:
        raise ConfigError(f"Indices of {p.id} and {q.id} are not adjacent")
    graph = _Graph(problem, catalog, p, q)
    tag = case_tag(p, q)
    first = 'fast' if p.slow_type is SlowType.ATTRACTOR else 'slow'
    limit = problem.tol.max_path_length
    found = {}

    def extend(rests, segments, need):
        rest = rests[-1]
        if rest.kind == 'crit' and rest.ref == q.id:
            seq = FastSlowOrbitSeq(p.id, q.id, tuple(rests), tuple(segments), tag)
            if not seq.parity_ok():
                raise GraphInconsistency(f"Case {tag} parity violated by {[s.kind for s in segments]}")
            found.setdefault(seq.signature, seq)
            return
        if len(segments) >= limit:
            logger.warning(f"Path from {p.id} to {q.id} truncated at {limit} segments")
            return
        if rest.kind == 'crit' and len(rests) > 1:
            return
        if need == 'fast':
            edges = list(graph.fast_edges(rest))
        else:
            edges = list(graph.slow_edges(rest))
            if rest.kind == 'fold' and len(segments) > 0:
                edges.append((Segment('slow', ref=f"{rest.ref}:trivial"), rest))
        for segment, nxt in edges:
            if not segment.trivial and nxt.F >= rest.F:
                raise GraphInconsistency(
                    f"F does not decrease along {segment.kind} edge {segment.ref}: {rest.F:.12g} -> {nxt.F:.12g}")
            if segment.kind == 'fast' and segment.witness is not None:
                segment = Segment(segment.kind, segment.fast_kind, segment.branch, segment.direction,
                                  segment.ref, segment.witness, _fast_points(segment))
            extend(rests + [nxt], segments + [segment], 'slow' if need == 'fast' else 'fast')

    extend([graph.start()], [], first)
    seqs = sorted(found.values(), key=lambda s: s.signature)
    for s in seqs:
        interior = [r for r in s.rests[1:-1] if r.kind == 'crit']
        if interior:
            raise GraphInconsistency(f"Interior critical point in fast-slow orbit {p.id}->{q.id}")
    logger.info(f"{len(seqs)} fast-slow orbits from {p.id} to {q.id} (case {tag})")
    return seqs


# Convergence diagnostics

def hausdorff(a, b):
    """Hausdorff distance on T² × ℝ between two point clouds."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    bound = 4.0 * (max(np.max(np.abs(a[:, 2])), np.max(np.abs(b[:, 2]))) + 1.0)
    da, _ = torus_tree(b, bound).query(tree_query_points(a, bound))
    db, _ = torus_tree(a, bound).query(tree_query_points(b, bound))
    return float(max(np.max(da), np.max(db)))


@dataclass
class ConvergenceReport:
    p: str
    q: str
    rows: list
    decreasing: bool
    final_ok: bool
    eta_gap: float

    def to_json(self):
        return {'p': self.p, 'q': self.q, 'rows': self.rows, 'decreasing': self.decreasing,
                'final_ok': self.final_ok, 'eta_gap': self.eta_gap}


def check_convergence(problem: Problem, fs: FastSlowOrbitSeq, lambdas, witnesses=None, crit=None,
                      workers=1) -> ConvergenceReport:
    """Hausdorff distance between λ-orbit witnesses and the fast-slow orbit, λ decreasing."""
    crit = crit if crit is not None else find_crit_F(problem)
    by_id = {c.id: c for c in crit}
    image = fs.image()
    fs_range = (float(np.min(image[:, 2])), float(np.max(image[:, 2])))
    rows = []
    for lam in sorted(lambdas, reverse=True):
        trajs = (witnesses or {}).get(lam)
        if trajs is None:
            seeds = [Seed(fs.p, fs.q, image, 'fast-slow')] if lam <= problem.tol.fast_slow_seed_lambda else ()
            _, trajs = count_boundary_lambda(problem, lam, by_id[fs.p], by_id[fs.q], crit, workers, seeds)
        if not trajs:
            rows.append({'lambda': lam, 'distance': None, 'eta_range': None})
            continue
        scored = []
        for tr in trajs:
            pts = tr.resample(0.02)
            scored.append((hausdorff(pts, image), tr.eta_range))
        dist, eta_range = min(scored, key=lambda s: s[0])
        rows.append({'lambda': lam, 'distance': dist, 'eta_range': list(eta_range)})
    values = [r['distance'] for r in rows if r['distance'] is not None]
    decreasing = all(b <= 1.1 * a + 1e-3 for a, b in zip(values[:-1], values[1:])) and len(values) == len(rows)
    final_ok = bool(values) and rows[-1]['distance'] is not None and rows[-1]['distance'] < problem.tol.proximity_tol
    last = rows[-1]['eta_range'] if rows and rows[-1]['eta_range'] else None
    eta_gap = max(abs(last[0] - fs_range[0]), abs(last[1] - fs_range[1])) if last else float('inf')
    return ConvergenceReport(fs.p, fs.q, rows, decreasing, final_ok, eta_gap)
