"""The slow manifold C_F = {∇f + η∇μ = 0}: continuation, folds and the slow equation."""
import enum
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .critical import confinement_bound, fast_spectrum, find_crit_F, find_critical_points
from .exceptions import (
    ContinuationStall, FoldDegenerate, NewtonDivergence, NotFound,
)
from .field import (
    ExtendedPoint, Problem, hess_f_eta, torus_delta, torus_tree, tree_query_points, wrap_angles,
)
from .flow import Trajectory, fast_equilibrium, separatrices

logger = logging.getLogger(__name__)

MAX_CUTOFF_ROUNDS = 4
CORRECTOR_ITER = 8


class MarkerKind(str, enum.Enum):
    CRIT = 'crit'
    FOLD = 'fold'
    HANDLE_SLIDE = 'handle_slide'


@dataclass(frozen=True)
class Marker:
    kind: MarkerKind
    ref: str
    eta: float

    def to_json(self):
        return {'kind': self.kind.value, 'ref': self.ref, 'eta': self.eta}


class EndpointKind(str, enum.Enum):
    FOLD = 'fold'
    ETA_CUTOFF = 'eta_cutoff'
    CLOSED_LOOP = 'closed_loop'


@dataclass(frozen=True)
class Endpoint:
    kind: EndpointKind
    ref: Optional[str] = None
    sign: int = 0

    def to_json(self):
        return {'kind': self.kind.value, 'ref': self.ref, 'sign': self.sign}


@dataclass(frozen=True, eq=False)
class SlowBranch:
    """A piece of C_F between folds (or cutoffs), stored as lifted nodes sorted by η."""

    id: str
    nodes: np.ndarray
    fast_index: int
    lo: Endpoint
    hi: Endpoint
    markers: tuple = ()

    @property
    def eta_lo(self):
        return float(self.nodes[0, 2])

    @property
    def eta_hi(self):
        return float(self.nodes[-1, 2])

    @property
    def endpoints(self):
        return self.lo, self.hi

    def contains(self, eta, strict=True):
        if strict:
            return self.eta_lo < eta < self.eta_hi
        return self.eta_lo <= eta <= self.eta_hi

    @property
    def crit_markers(self):
        return [m for m in self.markers if m.kind is MarkerKind.CRIT]

    def with_markers(self, extra):
        merged = sorted(list(self.markers) + list(extra), key=lambda m: (m.eta, m.kind.value, m.ref))
        return replace(self, markers=tuple(merged))

    def arclength(self):
        steps = np.linalg.norm(np.diff(self.nodes, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def csv_rows(self, problem):
        x, eta = self.nodes[:, :2], self.nodes[:, 2]
        d_c = np.linalg.det(hess_f_eta(problem, x, eta))
        mu = problem.mu.eval(x)
        wrapped = wrap_angles(x)
        for s, xw, e, dc, m in zip(self.arclength(), wrapped, eta, d_c, mu):
            yield [s, xw[0], xw[1], e, dc, m]

    def to_json(self):
        return {
            'id': self.id,
            'fast_index': self.fast_index,
            'eta_range': [self.eta_lo, self.eta_hi],
            'lo': self.lo.to_json(),
            'hi': self.hi.to_json(),
            'markers': [m.to_json() for m in self.markers],
            'nodes': len(self.nodes),
        }


@dataclass(frozen=True, eq=False)
class FoldPoint:
    """Fold of C_F with its normal form ż = c(η − η_p) + d z².

    null_vec is oriented so that d > 0; the higher-index branch leaves along
    +null_vec and the fast flow at η_p crosses the fold in that direction.
    """

    id: str
    point: ExtendedPoint
    c: float
    d: float
    lower_index: int
    null_vec: tuple
    consistency: float = float('nan')
    upper_branch: Optional[str] = None
    lower_branch: Optional[str] = None

    @property
    def x(self):
        return np.array(self.point.x)

    @property
    def eta(self):
        return self.point.eta

    @property
    def v(self):
        return np.array(self.null_vec)

    @property
    def eta_side(self):
        """+1 when the branches lie at η > η_p, −1 otherwise."""
        return 1 if -self.d / self.c > 0 else -1

    def as_array(self):
        return self.point.as_array()

    def to_json(self):
        return {
            'id': self.id,
            'x': list(self.point.x),
            'eta': self.eta,
            'c': self.c,
            'd': self.d,
            'lower_index': self.lower_index,
            'null_vec': list(self.null_vec),
            'consistency': self.consistency,
            'upper_branch': self.upper_branch,
            'lower_branch': self.lower_branch,
        }


def _jacobian(problem: Problem, y):
    x, eta = y[..., :2], y[..., 2]
    h = hess_f_eta(problem, x, eta)
    g = problem.mu.grad(x)
    return np.concatenate([h, g[..., :, None]], axis=-1)


def _residual(problem: Problem, y):
    return problem.f.grad(y[..., :2]) + y[..., 2, None] * problem.mu.grad(y[..., :2])


def unit_tangent(problem: Problem, y):
    """Kernel direction of [Hess f_η | ∇μ]; its η-component equals det Hess f_η."""
    jac = _jacobian(problem, y)
    t = np.cross(jac[0], jac[1])
    return t / np.linalg.norm(t)


def jacobian_min_singular(problem: Problem, nodes):
    """Smallest singular value of [Hess f_η | ∇μ] over the given nodes."""
    jac = _jacobian(problem, np.asarray(nodes, dtype=float).reshape(-1, 3))
    return float(np.min(np.linalg.svd(jac, compute_uv=False)))


def _correct(problem: Problem, y_pred, t):
    tol = problem.tol
    y = y_pred.copy()
    for _ in range(CORRECTOR_ITER):
        r = _residual(problem, y)
        if np.linalg.norm(r) <= tol.continuation_tol:
            return y
        system = np.vstack([_jacobian(problem, y), t])
        rhs = -np.concatenate([r, [t @ (y - y_pred)]])
        try:
            y = y + np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError:
            return None
    return y if np.linalg.norm(_residual(problem, y)) <= tol.continuation_tol else None


def _periodic_distance(a, b):
    d = torus_delta(a[:2], b[:2])
    return float(np.sqrt(d @ d + (a[2] - b[2]) ** 2))


def _trace_direction(problem: Problem, y0, sign, cut):
    """Continue from y0 until |η| > cut or the curve closes; returns (nodes, closed)."""
    tol = problem.tol
    step = tol.continuation_step
    nodes = [np.asarray(y0, dtype=float)]
    t_prev = sign * unit_tangent(problem, nodes[0])
    h, length = step, 0.0
    while len(nodes) < tol.max_nodes:
        y = nodes[-1]
        t = unit_tangent(problem, y)
        if t @ t_prev < 0:
            t = -t
        y_new = _correct(problem, y + h * t, t)
        if y_new is None or np.linalg.norm(y_new - y) > 1.5 * h or abs(unit_tangent(problem, y_new) @ t) < 0.5:
            h /= 2
            if h < tol.min_step:
                raise ContinuationStall(f"Continuation step fell below {tol.min_step:g}", at=y.tolist())
            continue
        length += float(np.linalg.norm(y_new - y))
        nodes.append(y_new)
        t_prev = t
        h = min(2 * h, step)
        if abs(y_new[2]) > cut:
            return np.array(nodes), False
        if length > 10 * step and _periodic_distance(y_new, nodes[0]) < 0.75 * step:
            return np.array(nodes[:-1]), True
    raise ContinuationStall(f"Node limit {tol.max_nodes} reached while tracing", seed=list(map(float, y0)))


def trace_curve(problem: Problem, seed, cut):
    """One connected component of C_F through seed, as (nodes, closed)."""
    forward, closed = _trace_direction(problem, seed, 1.0, cut)
    if closed:
        return forward, True
    backward, _ = _trace_direction(problem, seed, -1.0, cut)
    return np.vstack([backward[::-1][:-1], forward]), False


def relift(nodes):
    """Make x coordinates continuous along a node sequence."""
    nodes = np.array(nodes, dtype=float)
    if len(nodes) > 1:
        steps = torus_delta(nodes[1:, :2], nodes[:-1, :2])
        nodes[:, :2] = nodes[0, :2] + np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    return nodes


def _det_and_gradient(problem: Problem, y):
    x, eta = y[:2], y[2]
    h = hess_f_eta(problem, x, eta)
    adj = np.array([[h[1, 1], -h[0, 1]], [-h[1, 0], h[0, 0]]])
    third = problem.f.third(x) + eta * problem.mu.third(x)
    dx = np.einsum('ij,ijk->k', adj, third)
    deta = float(np.sum(adj * problem.mu.hess(x)))
    return float(np.linalg.det(h)), np.array([dx[0], dx[1], deta])


def locate_fold(problem: Problem, guess):
    """Bordered Newton on {∇f + η∇μ = 0, det Hess f_η = 0}."""
    tol = problem.tol
    y = np.asarray(guess, dtype=float).copy()
    for _ in range(tol.newton_max_iter):
        det, ddet = _det_and_gradient(problem, y)
        r = np.concatenate([_residual(problem, y), [det]])
        if np.linalg.norm(r) <= tol.newton_tol:
            return y
        system = np.vstack([_jacobian(problem, y), ddet])
        try:
            y = y - np.linalg.solve(system, r)
        except np.linalg.LinAlgError as e:
            raise NewtonDivergence(f"Singular bordered system near {guess}") from e
    raise NewtonDivergence(f"Fold refinement did not converge from {np.asarray(guess).tolist()}")


def fold_derivative(problem: Problem, fold):
    """Derivative of d_C = det Hess f_η along the unit tangent of C_F at the fold."""
    y = fold.as_array()
    _, ddet = _det_and_gradient(problem, y)
    return float(ddet @ unit_tangent(problem, y))


def _fold_frame(problem: Problem, y):
    eigs, vecs = np.linalg.eigh(hess_f_eta(problem, y[:2], y[2]))
    k = int(np.argmin(np.abs(eigs)))
    other = eigs[1 - k]
    if abs(other) < problem.tol.degenerate_eig:
        raise FoldDegenerate(f"Both Hessian eigenvalues vanish at {y.tolist()}")
    return vecs[:, k], int(other < 0)


def fold_local_model(problem: Problem, fold) -> Tuple[float, float]:
    """Normal-form coefficients (c, d) in the frame of the fold's null vector."""
    y = fold.as_array() if hasattr(fold, 'as_array') else np.asarray(fold, dtype=float)
    v = fold.v if hasattr(fold, 'v') else _fold_frame(problem, y)[0]
    x, eta = y[:2], y[2]
    c = -float(v @ problem.mu.grad(x))
    third = problem.f.third(x) + eta * problem.mu.third(x)
    d = -0.5 * float(np.einsum('ijk,i,j,k->', third, v, v, v))
    tol = problem.tol.assumption_tol
    if abs(c) < tol or abs(d) < tol:
        raise FoldDegenerate(f"Fold normal form degenerate at {y.tolist()}: c={c:.3e}, d={d:.3e}")
    return c, d


def parabola_consistency(problem: Problem, y, v, c, d, radius=0.02):
    """Relative gap between the branch parabola η − η_p ≈ k z² and k = −d/c."""
    nodes = []
    t = unit_tangent(problem, y)
    for sign in (1.0, -1.0):
        prev, h = y, radius / 10
        for _ in range(10):
            tan = unit_tangent(problem, prev)
            if tan @ (sign * t) < 0:
                tan = -tan
            nxt = _correct(problem, prev + h * tan, tan)
            if nxt is None:
                break
            nodes.append(nxt)
            prev = nxt
    nodes = np.array(nodes)
    if len(nodes) < 4:
        return float('nan')
    z = torus_delta(nodes[:, :2], y[:2]) @ v
    z2 = z * z
    k = float(np.sum(z2 * (nodes[:, 2] - y[2])) / np.sum(z2 * z2))
    expected = -d / c
    return abs(k - expected) / abs(expected)


def _make_fold(problem: Problem, y):
    v, lower_index = _fold_frame(problem, y)
    x, eta = y[:2], y[2]
    third = problem.f.third(x) + eta * problem.mu.third(x)
    if np.einsum('ijk,i,j,k->', third, v, v, v) > 0:
        v = -v
    fold = FoldPoint(id='', point=ExtendedPoint(tuple(x), eta), c=0.0, d=0.0,
                     lower_index=lower_index, null_vec=tuple(float(a) for a in v))
    c, d = fold_local_model(problem, fold)
    consistency = parabola_consistency(problem, y, v, c, d)
    if consistency > 0.05:
        logger.warning(f"Fold at eta={eta:.6g}: branch curvature differs from -d/c by {100 * consistency:.1f}%")
    return replace(fold, c=c, d=d, consistency=consistency)


def _curve_folds(problem: Problem, nodes, closed):
    """Fold positions along a curve: list of (interval index, refined point)."""
    det = np.linalg.det(hess_f_eta(problem, nodes[:, :2], nodes[:, 2]))
    pairs = list(range(len(nodes) - 1)) + ([len(nodes) - 1] if closed else [])
    found = []
    for i in pairs:
        j = (i + 1) % len(nodes)
        if np.sign(det[i]) == np.sign(det[j]) or det[i] == 0:
            continue
        w = det[i] / (det[i] - det[j])
        b = nodes[j] if j else nodes[i] + torus_step(nodes[i], nodes[j])
        found.append((i, locate_fold(problem, (1 - w) * nodes[i] + w * b)))
    return found


def torus_step(a, b):
    return np.concatenate([torus_delta(b[:2], a[:2]), [b[2] - a[2]]])


def _segments(nodes, folds, closed):
    """Split a traced curve at its folds; yields (nodes, start_fold, end_fold) with fold indices."""
    if not folds:
        yield nodes, None, None
        return
    if closed:
        first = folds[0][0]
        nodes = relift(np.roll(nodes, -(first + 1), axis=0))
        shift = first + 1
        folds = [((i - shift) % len(nodes), k) for i, k in folds]
        folds.sort()
        bounds = [(-1, folds[-1][1])] + folds
        for (i0, k0), (i1, k1) in zip(bounds[:-1], bounds[1:]):
            yield nodes[i0 + 1:i1 + 1], k0, k1
        return
    bounds = [(-1, None)] + list(folds) + [(len(nodes) - 1, None)]
    for (i0, k0), (i1, k1) in zip(bounds[:-1], bounds[1:]):
        yield nodes[i0 + 1:i1 + 1], k0, k1


def _seed_points(problem: Problem, crit, cut):
    seeds = [p.as_array() for p in crit]
    for eta in np.linspace(-cut * 0.9, cut * 0.9, problem.tol.eta_seed_count):
        for cp in find_critical_points(problem.f_eta(eta)):
            if cp.min_abs_eig > problem.tol.degenerate_eig:
                seeds.append(np.array([cp.x[0], cp.x[1], eta]))
    return seeds


def _trace_all(problem: Problem, crit, cut):
    step = problem.tol.continuation_step
    bound = 4.0 * (cut + 1.0)
    curves, all_nodes = [], []
    for seed in _seed_points(problem, crit, cut):
        if all_nodes:
            tree = torus_tree(np.vstack(all_nodes), bound)
            dist, _ = tree.query(tree_query_points(seed, bound)[0])
            if dist < 3 * step:
                continue
        nodes, closed = trace_curve(problem, seed, cut)
        curves.append((nodes, closed))
        all_nodes.append(nodes)
    logger.debug(f"Traced {len(curves)} components of the slow manifold with cutoff {cut:.4g}")
    return curves


def _assemble(problem: Problem, curves, crit, cut):
    raw_folds, pieces = [], []
    for nodes, closed in curves:
        located = _curve_folds(problem, nodes, closed)
        keyed = []
        for i, y in located:
            raw_folds.append(_make_fold(problem, y))
            keyed.append((i, len(raw_folds) - 1))
        for seg, k0, k1 in _segments(nodes, keyed, closed):
            pts = [seg]
            if k0 is not None:
                pts.insert(0, raw_folds[k0].as_array()[None, :])
            if k1 is not None:
                pts.append(raw_folds[k1].as_array()[None, :])
            seg = relift(np.vstack(pts))
            if len(seg) < 2:
                continue
            if closed and not keyed:
                logger.warning("Closed slow-manifold component without folds")
                ends = (Endpoint(EndpointKind.CLOSED_LOOP), Endpoint(EndpointKind.CLOSED_LOOP))
            else:
                start = Endpoint(EndpointKind.FOLD, k0) if k0 is not None else \
                    Endpoint(EndpointKind.ETA_CUTOFF, sign=int(np.sign(seg[0, 2])))
                end = Endpoint(EndpointKind.FOLD, k1) if k1 is not None else \
                    Endpoint(EndpointKind.ETA_CUTOFF, sign=int(np.sign(seg[-1, 2])))
                ends = (start, end)
            if seg[-1, 2] < seg[0, 2]:
                seg, ends = seg[::-1].copy(), ends[::-1]
            if np.any(np.diff(seg[:, 2]) < 0):
                logger.debug("Non-monotone eta between folds; nodes re-sorted")
                seg = relift(seg[np.argsort(seg[:, 2], kind='stable')])
            pieces.append((seg, ends))
    fold_order = sorted(range(len(raw_folds)),
                        key=lambda k: (round(raw_folds[k].eta, 9), round(raw_folds[k].point.x[0], 9),
                                       round(raw_folds[k].point.x[1], 9)))
    fold_ids = {k: f"fold{n}" for n, k in enumerate(fold_order)}
    piece_order = sorted(range(len(pieces)),
                         key=lambda n: (round(pieces[n][0][0, 2], 9), round(pieces[n][0][-1, 2], 9),
                                        round(float(wrap_angles(pieces[n][0][len(pieces[n][0]) // 2, 0])), 9)))
    branches = []
    for b, n in enumerate(piece_order):
        seg, ends = pieces[n]
        ends = tuple(replace(e, ref=fold_ids[e.ref]) if e.kind is EndpointKind.FOLD else e for e in ends)
        mid = seg[len(seg) // 2]
        _, index, _ = fast_spectrum(problem, mid[:2], mid[2])
        markers = [Marker(MarkerKind.FOLD, e.ref, float(seg[0 if i == 0 else -1, 2]))
                   for i, e in enumerate(ends) if e.kind is EndpointKind.FOLD]
        branches.append(SlowBranch(id=f"b{b}", nodes=seg, fast_index=index, lo=ends[0], hi=ends[1],
                                   markers=tuple(markers)))
    branches = _mark_crit(problem, branches, crit)
    folds = []
    for k in fold_order:
        fold = replace(raw_folds[k], id=fold_ids[k])
        touching = [b for b in branches if any(e.ref == fold.id for e in b.endpoints)]
        upper = next((b.id for b in touching if b.fast_index == fold.lower_index + 1), None)
        lower = next((b.id for b in touching if b.fast_index == fold.lower_index), None)
        folds.append(replace(fold, upper_branch=upper, lower_branch=lower))
    return branches, folds


def _mark_crit(problem: Problem, branches, crit):
    out = {b.id: [] for b in branches}
    for p in crit:
        hits = []
        for b in branches:
            if not b.contains(p.eta, strict=False):
                continue
            x = x_at(problem, b, p.eta)
            if np.linalg.norm(torus_delta(x, p.x)) < 1e-6:
                hits.append(b)
        if not hits:
            logger.warning(f"Critical point {p.id} matched no slow branch")
            continue
        out[hits[0].id].append(Marker(MarkerKind.CRIT, p.id, p.eta))
    return [b.with_markers(out[b.id]) for b in branches]


def trace_slow_manifold(problem: Problem, crit=None) -> Tuple[List[SlowBranch], List[FoldPoint]]:
    """Branches of C_F split at folds, cut beyond the confinement bound."""
    if crit is None:
        crit = find_crit_F(problem)
    folds = []
    cut = None
    for _ in range(MAX_CUTOFF_ROUNDS):
        new_cut = confinement_bound(problem, crit, folds) + problem.tol.trace_margin
        if cut is not None and new_cut <= cut:
            break
        cut = new_cut
        curves = _trace_all(problem, crit, cut)
        branches, folds = _assemble(problem, curves, crit, cut)
    logger.info(f"Slow manifold: {len(branches)} branches, {len(folds)} folds (cutoff |eta| = {cut:.4g})")
    return branches, folds


def x_at(problem: Problem, branch: SlowBranch, eta: float):
    """The point of the branch over η, interpolated and polished by Newton at fixed η."""
    if not branch.contains(eta, strict=False):
        raise NotFound(f"eta={eta:.6g} outside branch {branch.id} range [{branch.eta_lo:.6g}, {branch.eta_hi:.6g}]")
    nodes = branch.nodes
    x = np.array([np.interp(eta, nodes[:, 2], nodes[:, 0]), np.interp(eta, nodes[:, 2], nodes[:, 1])])
    return wrap_angles(_polish(problem, x, eta))


def _polish(problem: Problem, x, eta, max_step=0.05):
    tol = problem.tol
    x = np.asarray(x, dtype=float).copy()
    for _ in range(tol.newton_max_iter):
        g = problem.f.grad(x) + eta * problem.mu.grad(x)
        if np.linalg.norm(g) <= tol.newton_tol:
            break
        h = hess_f_eta(problem, x, eta)
        if abs(np.linalg.det(h)) < tol.degenerate_eig ** 2:
            break
        dx = np.linalg.solve(h, g)
        if np.linalg.norm(dx) > max_step:
            logger.debug(f"Fixed-eta Newton step {np.linalg.norm(dx):.3g} rejected at eta={eta:.6g}")
            break
        x -= dx
    return x


def fast_newton(problem: Problem, x0, eta):
    """Critical point of f_η near x0, or None."""
    x = _polish(problem, x0, eta, max_step=0.5)
    if np.linalg.norm(problem.f.grad(x) + eta * problem.mu.grad(x)) > problem.tol.newton_tol * 10:
        return None
    return wrap_angles(x)


def points_at_eta(problem: Problem, branches: Sequence[SlowBranch], eta: float):
    """All (branch, x) with η strictly inside the branch range."""
    return [(b, x_at(problem, b, eta)) for b in branches if b.contains(eta)]


def slow_velocity(problem: Problem, branch: SlowBranch, node) -> float:
    """η′ = −μ(x(η)) at a node index or (x, η) point of the branch."""
    y = branch.nodes[node] if isinstance(node, (int, np.integer)) else np.asarray(node, dtype=float)
    return -float(problem.mu.eval(y[:2]))


def slow_derivative(problem: Problem, branch: SlowBranch, eta: float, h=1e-6):
    """d/dη of μ(x(η)) by central differences along the branch."""
    up = problem.mu.eval(x_at(problem, branch, min(eta + h, branch.eta_hi)))
    down = problem.mu.eval(x_at(problem, branch, max(eta - h, branch.eta_lo)))
    return float((up - down) / (min(eta + h, branch.eta_hi) - max(eta - h, branch.eta_lo)))


def slow_sign_changes(problem: Problem, branch: SlowBranch):
    """(η_a, η_b) node intervals across which η′ = −μ changes sign.

    Nodes where μ vanishes to solver precision are skipped, so a change at
    a critical point of F shows up as the interval around that node.
    """
    mu = problem.mu.eval(branch.nodes[:, :2])
    keep = np.nonzero(np.abs(mu) > 10 * problem.tol.newton_tol)[0]
    eta = branch.nodes[:, 2]
    return [(float(eta[i]), float(eta[j])) for i, j in zip(keep[:-1], keep[1:]) if mu[i] * mu[j] < 0]


def check_slow_hyperbolicity(problem: Problem, branches: Sequence[SlowBranch]):
    """(margin, mismatches) for the slow equation on every branch.

    The margin is the smallest |d μ(x(η))/dη| over Crit(F) markers.
    Mismatches list sign changes of η′ away from every marker and markers
    where η′ keeps its sign.
    """
    margin = float('inf')
    mismatches = []
    for b in branches:
        changes = slow_sign_changes(problem, b)
        markers = [m for m in b.crit_markers if b.contains(m.eta, strict=False)]
        for lo, hi in changes:
            if not any(lo - 1e-9 <= m.eta <= hi + 1e-9 for m in markers):
                mismatches.append(f"{b.id}: eta' changes sign in [{lo:.6g}, {hi:.6g}] away from Crit(F)")
        for m in markers:
            if not any(lo - 1e-9 <= m.eta <= hi + 1e-9 for lo, hi in changes):
                mismatches.append(f"{b.id}: eta' keeps its sign through {m.ref}")
            margin = min(margin, abs(slow_derivative(problem, b, m.eta)))
    for line in mismatches:
        logger.warning(line)
    return margin, mismatches


def short_orbit(problem: Problem, fold: FoldPoint, s: float) -> Trajectory:
    """Fast orbit across the fold between the two branch points at η_p − (d/c)s²."""
    if not 0 < s <= problem.tol.short_orbit_eps0:
        raise NotFound(f"s={s:g} outside (0, {problem.tol.short_orbit_eps0:g}]")
    eta = fold.eta - (fold.d / fold.c) * s * s
    x_up = fast_newton(problem, fold.x + s * fold.v, eta)
    x_lo = fast_newton(problem, fold.x - s * fold.v, eta)
    if x_up is None or x_lo is None or np.linalg.norm(torus_delta(x_up, x_lo)) < s / 10:
        raise NotFound(f"Branch points near fold {fold.id} not found at s={s:g}")
    up = fast_equilibrium(problem, 'upper', x_up, eta)
    lo = fast_equilibrium(problem, 'lower', x_lo, eta)
    others = [
        fast_equilibrium(problem, f"e{i}", cp.x, eta)
        for i, cp in enumerate(find_critical_points(problem.f_eta(eta)))
        if min(np.linalg.norm(torus_delta(cp.x, x_up)), np.linalg.norm(torus_delta(cp.x, x_lo))) > s / 10
    ]
    radius = min(problem.tol.shooting_radius, 1e-2 * s)
    if fold.lower_index == 0:
        source, target, reverse = up, lo, False
    else:
        source, target, reverse = lo, up, True
    trajs = separatrices(problem, eta, source, [up, lo] + others, reverse=reverse, radius=radius)
    hits = [tr for tr in trajs if tr.terminal.target == target.id]
    if len(hits) != 1:
        raise NotFound(f"Short orbit at fold {fold.id}, s={s:g}: {len(hits)} separatrices connect")
    return hits[0]


def branch_by_id(branches: Sequence[SlowBranch], branch_id):
    for b in branches:
        if b.id == branch_id:
            return b
    raise NotFound(f"No branch {branch_id}")
