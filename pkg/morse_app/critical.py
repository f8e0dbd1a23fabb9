"""Critical points of F, of f_η and of plain torus fields, and the
genericity checker run before any pipeline."""
import enum
import logging
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional

import numpy as np

from .exceptions import DegenerateCritical, NewtonDivergence, WorkbenchError
from .field import (
    ExtendedPoint, F_value, Problem, TorusField, extended_distance, hess_F,
    hess_f_eta, torus_delta, wrap_angles,
)

logger = logging.getLogger(__name__)


class SlowType(str, enum.Enum):
    ATTRACTOR = 'attractor'
    REPELLER = 'repeller'


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    """Critical point of a single torus field."""

    x: np.ndarray
    index: int
    eigs: np.ndarray
    value: float

    @property
    def min_abs_eig(self):
        return float(np.min(np.abs(self.eigs)))


@dataclass(frozen=True, eq=False)
class CritPointF:
    id: str
    point: ExtendedPoint
    index_F: int
    fast_index: int
    slow_type: SlowType
    hessian_eigs: tuple
    slow_eigenvalue: float
    fast_degenerate: bool
    F: float

    @property
    def x(self):
        return np.array(self.point.x)

    @property
    def eta(self):
        return self.point.eta

    def as_array(self):
        return self.point.as_array()

    @property
    def is_repeller(self):
        return self.slow_type is SlowType.REPELLER

    def to_json(self):
        return {
            'id': self.id,
            'x': list(self.point.x),
            'eta': self.eta,
            'index_F': self.index_F,
            'fast_index': self.fast_index,
            'slow_type': self.slow_type.value,
            'hessian_eigs': list(self.hessian_eigs),
            'slow_eigenvalue': self.slow_eigenvalue,
            'F': self.F,
        }


def fast_spectrum(problem: Problem, x, eta):
    """Eigenvalues of Hess f_η(x), the count of negative ones and a near-zero flag."""
    eigs = np.linalg.eigvalsh(hess_f_eta(problem, np.asarray(x, dtype=float), eta))
    tol = problem.tol.degenerate_eig
    near_zero = bool(np.any(np.abs(eigs) < tol))
    return eigs, int(np.sum(eigs < -tol)), near_zero


def fast_index(problem: Problem, x, eta) -> int:
    eigs, index, near_zero = fast_spectrum(problem, x, eta)
    if near_zero:
        logger.debug(f"EigNearZero: Hess f_eta eigenvalues {eigs} at x={np.asarray(x).tolist()}, eta={eta:.6g}")
    return index


def slow_eigenvalue(problem: Problem, x, eta):
    """Linearization ∇μᵀ(Hess f_η)⁻¹∇μ of the slow equation η' = −μ(x(η))."""
    h = hess_f_eta(problem, x, eta)
    det_h = np.linalg.det(h)
    if abs(det_h) < problem.tol.degenerate_eig:
        return float('nan')
    return -float(np.linalg.det(hess_F(problem, x, eta))) / det_h


def classify_crit_point(problem: Problem, arr, point_id='') -> CritPointF:
    """Build a CritPointF from a converged (x1, x2, η), re-verifying residuals."""
    arr = np.asarray(arr, dtype=float)
    x, eta = wrap_angles(arr[:2]), float(arr[2])
    residual = np.concatenate([problem.f.grad(x) + eta * problem.mu.grad(x), [problem.mu.eval(x)]])
    if np.linalg.norm(residual) > problem.tol.newton_tol:
        raise NewtonDivergence(
            f"Critical point residual {np.linalg.norm(residual):.3e} above tolerance", point=arr.tolist())
    eigs = np.linalg.eigvalsh(hess_F(problem, x, eta))
    if np.min(np.abs(eigs)) < problem.tol.degenerate_eig:
        raise DegenerateCritical(f"Degenerate critical point of F at {arr.tolist()}", eigs=eigs.tolist())
    index_F = int(np.sum(eigs < 0))
    _, findex, fdeg = fast_spectrum(problem, x, eta)
    lam_slow = slow_eigenvalue(problem, x, eta)
    if fdeg or not np.isfinite(lam_slow):
        repeller = index_F - findex == 1
    else:
        repeller = lam_slow > 0
    return CritPointF(
        id=point_id,
        point=ExtendedPoint(tuple(x), eta),
        index_F=index_F,
        fast_index=findex,
        slow_type=SlowType.REPELLER if repeller else SlowType.ATTRACTOR,
        hessian_eigs=tuple(float(e) for e in eigs),
        slow_eigenvalue=lam_slow,
        fast_degenerate=fdeg,
        F=float(F_value(problem, np.array([x[0], x[1], eta]))),
    )


def _dedupe(points, radius):
    kept = []
    for p in points:
        if all(extended_distance(p, q) >= radius for q in kept):
            kept.append(p)
    return kept


def _grid(n):
    t = np.arange(n) * (2 * np.pi / n)
    g1, g2 = np.meshgrid(t, t, indexing='ij')
    return np.stack([g1.ravel(), g2.ravel()], axis=-1)


def newton_lagrange(problem: Problem, seeds):
    """Batched Newton on {∇f + η∇μ = 0, μ = 0}; returns (points, converged mask)."""
    y = np.array(seeds, dtype=float).reshape(-1, 3)
    tol = problem.tol
    converged = np.zeros(len(y), dtype=bool)
    for _ in range(tol.newton_max_iter):
        x, eta = y[:, :2], y[:, 2]
        r = np.concatenate([
            problem.f.grad(x) + eta[:, None] * problem.mu.grad(x),
            problem.mu.eval(x)[:, None],
        ], axis=1)
        norms = np.linalg.norm(r, axis=1)
        converged = norms <= tol.newton_tol / 10
        active = ~converged & np.isfinite(norms) & (np.abs(eta) < 1e8)
        if not np.any(active):
            break
        jac = hess_F(problem, x[active], eta[active])
        y[active] -= np.einsum('nij,nj->ni', np.linalg.pinv(jac), r[active])
    ok = converged & np.isfinite(y).all(axis=1) & (np.abs(y[:, 2]) < 1e8)
    return y, ok


def find_crit_F(problem: Problem, grid: Optional[int] = None) -> List[CritPointF]:
    """All solutions of μ = 0, ∇f + η∇μ = 0 reachable from a seed grid."""
    n = grid or problem.tol.seed_grid
    x = _grid(n)
    spacing = 2 * np.pi / n
    near = np.abs(problem.mu.eval(x)) <= 2.0 * spacing * max(problem.mu.gradient_bound(), 1e-12)
    x = x[near]
    if len(x) == 0:
        logger.info("No seed lies near the zero level of mu; Crit(F) is empty")
        return []
    for _ in range(3):
        gm = problem.mu.grad(x)
        n2 = np.sum(gm * gm, axis=1)
        safe = n2 > problem.tol.mu_grad_tol ** 2
        x[safe] -= (problem.mu.eval(x[safe]) / n2[safe])[:, None] * gm[safe]
    gm = problem.mu.grad(x)
    n2 = np.maximum(np.sum(gm * gm, axis=1), problem.tol.mu_grad_tol ** 2)
    eta0 = -np.sum(gm * problem.f.grad(x), axis=1) / n2
    y, ok = newton_lagrange(problem, np.column_stack([x, eta0]))
    diverged = int(np.sum(~ok))
    if diverged:
        logger.debug(f"NewtonDivergence on {diverged} of {len(ok)} seeds")
    pts = y[ok]
    pts[:, :2] = wrap_angles(pts[:, :2])
    order = np.lexsort((pts[:, 1], pts[:, 0], pts[:, 2]))
    unique = _dedupe(pts[order], problem.tol.dedupe_radius)
    unique.sort(key=lambda p: (round(p[2], 9), round(p[0], 9), round(p[1], 9)))
    crit = [classify_crit_point(problem, p, f"c{i}") for i, p in enumerate(unique)]
    logger.info(f"Found {len(crit)} critical points of F from {len(ok)} seeds (grid {n})")
    return crit


def crit_shift(a: List[CritPointF], b: List[CritPointF]) -> float:
    """Largest distance from a point of a to the point of b with the same index, inf if the sets differ."""
    if len(a) != len(b):
        return float('inf')
    worst = 0.0
    for p in a:
        same = [q.as_array() for q in b if q.index_F == p.index_F]
        if not same:
            return float('inf')
        worst = max(worst, float(np.min(extended_distance(np.array(same), p.as_array()))))
    return worst


def find_critical_points(field: TorusField, grid: int = 32, tol: float = 1e-11,
                         max_iter: int = 50) -> List[CriticalPoint]:
    """Critical points of a torus field from a Newton seed grid."""
    x = _grid(grid)
    ok = np.zeros(len(x), dtype=bool)
    for _ in range(max_iter):
        g = field.grad(x)
        norms = np.linalg.norm(g, axis=1)
        ok = norms <= tol
        active = ~ok & np.isfinite(norms)
        if not np.any(active):
            break
        x[active] -= np.einsum('nij,nj->ni', np.linalg.pinv(field.hess(x[active])), g[active])
    ok &= np.isfinite(x).all(axis=1)
    pts = wrap_angles(x[ok])
    kept = []
    for p in pts[np.lexsort((pts[:, 1], pts[:, 0]))]:
        if all(np.linalg.norm(torus_delta(p, q)) >= 1e-6 for q in kept):
            kept.append(p)
    out = []
    for p in kept:
        eigs = np.linalg.eigvalsh(field.hess(p))
        out.append(CriticalPoint(x=p, index=int(np.sum(eigs < 0)), eigs=eigs, value=float(field.eval(p))))
    return out


def crit_table(points: List[CritPointF]):
    return [p.to_json() for p in points]


class Status(str, enum.Enum):
    PASS = 'pass'
    FAIL = 'fail'
    UNVERIFIABLE = 'unverifiable'


@dataclass
class AssumptionStatus:
    status: Status
    margin: Optional[float] = None
    note: str = ''

    def to_json(self):
        return {'status': self.status.value, 'margin': self.margin, 'note': self.note}


@dataclass
class AssumptionReport:
    entries: Dict[str, AssumptionStatus] = dc_field(default_factory=dict)

    @property
    def failed(self):
        return sorted(name for name, e in self.entries.items() if e.status is Status.FAIL)

    @property
    def passed(self):
        return not self.failed

    def to_json(self):
        return {name: self.entries[name].to_json() for name in sorted(self.entries)}


MONITORED = ('A4', 'A5', 'A10', 'A11', 'A13')


def _gate(value, tol):
    return Status.PASS if value > tol else Status.FAIL


def special_eta_gap(values):
    vals = np.sort(np.asarray(values, dtype=float))
    if len(vals) < 2:
        return float('inf')
    return float(np.min(np.diff(vals)))


def check_assumptions(problem: Problem, slow_result=None, handle_slides=None, catalog=None) -> AssumptionReport:
    """Numerically checkable genericity assumptions; report only, never raises.

    A built catalog supplies the slow manifold, the handle-slides and the
    special η values, so nothing is traced or scanned twice.
    """
    from .homology import level_set_geometry
    from .slow import check_slow_hyperbolicity, fold_derivative, jacobian_min_singular, trace_slow_manifold

    if catalog is not None:
        slow_result = (list(catalog.branches), list(catalog.folds))
        handle_slides = list(catalog.handle_slides)

    tol = problem.tol.assumption_tol
    report = AssumptionReport()
    crit_f = find_critical_points(problem.f)
    crit_mu = find_critical_points(problem.mu)
    a2 = min([c.min_abs_eig for c in crit_f + crit_mu], default=float('inf'))
    crit = []
    a2_note = f"{len(crit_f)} critical points of f, {len(crit_mu)} of mu"
    try:
        crit = find_crit_F(problem)
    except DegenerateCritical as e:
        a2 = 0.0
        a2_note += f"; {e}"
    report.entries['A2'] = AssumptionStatus(_gate(a2, tol), a2, a2_note)

    try:
        geometry = level_set_geometry(problem)
        a3 = geometry.min_grad_mu
        report.entries['A3'] = AssumptionStatus(
            _gate(a3, tol), a3, f"{len(geometry.components)} level-set components")
    except WorkbenchError as e:
        report.entries['A3'] = AssumptionStatus(Status.FAIL, None, str(e))

    if crit_f and crit_mu:
        a6 = min(float(np.linalg.norm(torus_delta(a.x, b.x))) for a in crit_f for b in crit_mu)
    else:
        a6 = float('inf')
    report.entries['A6'] = AssumptionStatus(_gate(a6, tol), a6, 'distance between Crit(f) and Crit(mu)')

    special = [p.eta for p in crit]
    if report.failed:
        skip = 'skipped: an earlier assumption failed, slow manifold not traced'
        for name in ('A7', 'A8', 'A9'):
            report.entries[name] = AssumptionStatus(Status.UNVERIFIABLE, None, skip)
        gap = special_eta_gap(special)
        report.entries['A12'] = AssumptionStatus(_gate(gap, tol), gap, 'Crit(F) eta values only')
    else:
        try:
            if slow_result is None:
                slow_result = trace_slow_manifold(problem, crit)
            branches, folds = slow_result
            a7 = min((jacobian_min_singular(problem, b.nodes) for b in branches), default=float('inf'))
            report.entries['A7'] = AssumptionStatus(_gate(a7, tol), a7, f"{len(branches)} branches")
            a8 = min((abs(fold_derivative(problem, fp)) for fp in folds), default=float('inf'))
            report.entries['A8'] = AssumptionStatus(_gate(a8, tol), a8, f"{len(folds)} folds")
            a9 = min((abs(float(problem.mu.eval(fp.x))) for fp in folds), default=float('inf'))
            slope, mismatches = check_slow_hyperbolicity(problem, branches)
            a9_status = _gate(min(a9, slope), tol) if not mismatches else Status.FAIL
            a9_note = f"|mu| at folds, |d mu/d eta| at Crit(F) markers ({slope:.3g})"
            if mismatches:
                a9_note += f"; {len(mismatches)} sign changes of eta' off Crit(F)"
            report.entries['A9'] = AssumptionStatus(a9_status, min(a9, slope), a9_note)
            special += [fp.eta for fp in folds]
            if handle_slides is None:
                from .orbits import detect_handle_slides
                handle_slides = detect_handle_slides(problem.with_eta_max(confinement_bound(problem, crit, folds)),
                                                     branches, folds)
            special = catalog.special_etas() if catalog is not None else special + [hs.eta for hs in handle_slides]
            gap = special_eta_gap(special)
            report.entries['A12'] = AssumptionStatus(
                _gate(gap, tol), gap,
                f"{len(crit)} Crit(F), {len(folds)} folds, {len(handle_slides)} handle-slides")
        except WorkbenchError as e:
            logger.error(f"Slow-manifold checks failed: {e}")
            for name in ('A7', 'A8', 'A9', 'A12'):
                report.entries.setdefault(name, AssumptionStatus(Status.FAIL, None, str(e)))

    for name in MONITORED:
        report.entries[name] = AssumptionStatus(
            Status.UNVERIFIABLE, None,
            'unverifiable - monitored via transversality condition numbers during orbit counting')
    logger.info(f"Assumption check: failed={report.failed}")
    return report


def confinement_bound(problem: Problem, crit, folds):
    """Confinement bound: 3 + max |η| over Crit(F) and folds."""
    if problem.eta_max is not None:
        return problem.eta_max
    etas = [abs(p.eta) for p in crit] + [abs(fp.eta) for fp in folds]
    return 3.0 + max(etas, default=0.0)
