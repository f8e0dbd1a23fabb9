"""GF(2) chain complexes: the λ-complex of F, the complex of f restricted
to μ⁻¹(0) and the fast-slow complex at λ = 0, plus their comparison."""
import logging
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .critical import CritPointF, find_crit_F
from .exceptions import BijectionMismatch, GraphInconsistency, TraceFailure
from .field import Problem, TWO_PI, hess_f_eta, torus_delta, torus_tree, tree_query_points, wrap_angles, zeta

logger = logging.getLogger(__name__)

J = np.array([[0.0, -1.0], [1.0, 0.0]])


def _low(v):
    return (v & -v).bit_length() - 1


@dataclass(frozen=True)
class Z2Matrix:
    """Binary matrix stored as one int bitset per row (bit j = column j)."""

    n_rows: int
    n_cols: int
    rows: tuple

    @classmethod
    def zeros(cls, n_rows, n_cols):
        return cls(n_rows, n_cols, (0,) * n_rows)

    @classmethod
    def from_dense(cls, dense):
        dense = np.atleast_2d(np.asarray(dense, dtype=np.int64) % 2)
        rows = tuple(sum(1 << int(j) for j in np.flatnonzero(r)) for r in dense)
        return cls(dense.shape[0], dense.shape[1], rows)

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols), dtype=np.uint8)
        for i, r in enumerate(self.rows):
            for j in range(self.n_cols):
                out[i, j] = (r >> j) & 1
        return out

    def entry(self, i, j):
        return (self.rows[i] >> j) & 1

    def columns(self):
        return [sum(((r >> j) & 1) << i for i, r in enumerate(self.rows)) for j in range(self.n_cols)]

    def __matmul__(self, other: 'Z2Matrix') -> 'Z2Matrix':
        if self.n_cols != other.n_rows:
            raise ValueError(f"Shape mismatch {self.n_rows}x{self.n_cols} @ {other.n_rows}x{other.n_cols}")
        rows = []
        for r in self.rows:
            acc = 0
            while r:
                j = _low(r)
                acc ^= other.rows[j]
                r &= r - 1
            rows.append(acc)
        return Z2Matrix(self.n_rows, other.n_cols, tuple(rows))

    def is_zero(self):
        return not any(self.rows)

    def to_json(self):
        return [[int(b) for b in row] for row in self.to_dense()]


def z2_reduce(matrix):
    """Rank and kernel basis over GF(2), pivoting on the first nonzero entry."""
    m = matrix if isinstance(matrix, Z2Matrix) else Z2Matrix.from_dense(matrix)
    pivots = {}
    kernel = []
    for j, col in enumerate(m.columns()):
        tag = 1 << j
        while col:
            low = _low(col)
            if low not in pivots:
                pivots[low] = (col, tag)
                break
            pcol, ptag = pivots[low]
            col ^= pcol
            tag ^= ptag
        if not col:
            kernel.append(np.array([(tag >> i) & 1 for i in range(m.n_cols)], dtype=np.uint8))
    return len(pivots), kernel


@dataclass(frozen=True)
class Provenance:
    kind: str
    lam: Optional[float] = None

    def __str__(self):
        return f"lambda={self.lam:g}" if self.kind == 'lambda' else self.kind


@dataclass(frozen=True, eq=False)
class Z2ChainComplex:
    """Graded generators with ∂_k: C_k → C_{k−1}; boundary[k] has rows C_{k−1}, columns C_k."""

    generators: Dict[int, tuple]
    boundary: Dict[int, Z2Matrix]
    provenance: Provenance
    witnesses: dict = dc_field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, generators, entries, provenance, witnesses=None):
        """Complex from generator lists and a set of (p id, q id) pairs with ⟨∂p, q⟩ = 1."""
        generators = {k: tuple(v) for k, v in sorted(generators.items()) if len(v)}
        pos = {k: {g: i for i, g in enumerate(v)} for k, v in generators.items()}
        degree_of = {g: k for k, v in generators.items() for g in v}
        boundary = {}
        for k, gens in generators.items():
            lower = generators.get(k - 1, ())
            rows = [0] * len(lower)
            for p, q in entries:
                if degree_of.get(p) == k and degree_of.get(q) == k - 1:
                    rows[pos[k - 1][q]] ^= 1 << pos[k][p]
            boundary[k] = Z2Matrix(len(lower), len(gens), tuple(rows))
        complex_ = cls(generators, boundary, provenance, witnesses or {})
        complex_.check_square_zero()
        return complex_

    @property
    def degrees(self):
        return sorted(self.generators)

    def rank(self, k):
        d = self.boundary.get(k)
        if d is None or d.n_rows == 0 or d.n_cols == 0:
            return 0
        return z2_reduce(d)[0]

    def betti(self):
        if not self.generators:
            return {}
        lo, hi = min(self.generators), max(self.generators)
        return {k: len(self.generators.get(k, ())) - self.rank(k) - self.rank(k + 1) for k in range(lo, hi + 1)}

    def check_square_zero(self):
        for k in self.generators:
            if k - 1 in self.boundary and k in self.boundary:
                lower, upper = self.boundary[k - 1], self.boundary[k]
                if lower.n_cols and upper.n_cols and lower.n_rows and not (lower @ upper).is_zero():
                    raise GraphInconsistency(f"d_{k - 1} d_{k} != 0 for {self.provenance}")

    def coefficient(self, p, q):
        for k, gens in self.generators.items():
            if p in gens:
                lower = self.generators.get(k - 1, ())
                if q not in lower:
                    return 0
                return self.boundary[k].entry(lower.index(q), gens.index(p))
        return 0

    def to_json(self):
        return {
            'provenance': str(self.provenance),
            'generators': {str(k): list(v) for k, v in self.generators.items()},
            'boundary': {str(k): m.to_json() for k, m in self.boundary.items()},
            'betti': {str(k): v for k, v in self.betti().items()},
        }


# μ⁻¹(0)

@dataclass(frozen=True)
class RestrictedCrit:
    id: str
    x: tuple
    index: int
    component: int
    s: float

    def to_json(self):
        return {'id': self.id, 'x': list(self.x), 'index': self.index, 'component': self.component, 's': self.s}


@dataclass(frozen=True, eq=False)
class LevelSetGeometry:
    components: List[np.ndarray]
    crit: List[RestrictedCrit]
    min_grad_mu: float

    @property
    def lengths(self):
        return [float(np.sum(np.linalg.norm(torus_delta(np.roll(c, -1, axis=0), c), axis=1))) for c in self.components]

    def crit_on(self, component):
        return sorted((r for r in self.crit if r.component == component), key=lambda r: r.s)

    def to_json(self):
        return {'components': len(self.components), 'lengths': self.lengths,
                'crit': [r.to_json() for r in self.crit], 'min_grad_mu': self.min_grad_mu}


def _project(problem: Problem, x):
    tol = problem.tol
    for _ in range(tol.newton_max_iter):
        g = problem.mu.grad(x)
        val = float(problem.mu.eval(x))
        if abs(val) < tol.newton_tol:
            return x
        x = x - val * g / float(g @ g)
    raise TraceFailure(f"Projection onto mu = 0 failed near {np.asarray(x).tolist()}")


def _level_seeds(problem: Problem, grid):
    h = TWO_PI / grid
    g = np.arange(grid) * h
    X1, X2 = np.meshgrid(g, g, indexing='ij')
    pts = np.stack([X1, X2], axis=-1)
    vals = problem.mu.eval(pts)
    seeds = []
    for axis in (0, 1):
        nxt = np.roll(vals, -1, axis=axis)
        for i, j in zip(*np.nonzero(np.sign(vals) != np.sign(nxt))):
            a, b = vals[i, j], nxt[i, j]
            step = np.zeros(2)
            step[axis] = h * a / (a - b)
            seeds.append(pts[i, j] + step)
    return seeds


def _trace_level(problem: Problem, x0, h):
    nodes = [x0]
    x, length = x0, 0.0
    for _ in range(problem.tol.max_nodes):
        g = problem.mu.grad(x)
        t = J @ g / np.linalg.norm(g)
        x = _project(problem, x + h * t)
        length += h
        if length > 10 * h and np.linalg.norm(torus_delta(x, x0)) < h:
            return np.array(wrap_angles(nodes))
        nodes.append(x)
    raise TraceFailure(f"Level-set component from {np.asarray(x0).tolist()} did not close")


def trace_level_set(problem: Problem, grid=128, step=None):
    """Closed polylines of μ = 0 by marching seeds plus predictor-corrector tracing."""
    h = step or problem.tol.continuation_step
    components = []
    tree = None
    for seed in _level_seeds(problem, grid):
        x = _project(problem, np.asarray(seed, dtype=float))
        if tree is not None and tree.query(tree_query_points(_lift(x[None, :]), 1.0))[0][0] < 3 * h:
            continue
        components.append(_trace_level(problem, x, h))
        tree = torus_tree(np.vstack([_lift(c) for c in components]), 1.0)
    logger.debug(f"Traced {len(components)} level-set components (grid {grid})")
    return components


def _lift(c):
    return np.column_stack([c, np.zeros(len(c))])


def _tangential(problem: Problem, x):
    return float(problem.f.grad(x) @ J @ problem.mu.grad(x))


def _restricted_newton(problem: Problem, x):
    tol = problem.tol
    for _ in range(tol.newton_max_iter):
        gm, gf = problem.mu.grad(x), problem.f.grad(x)
        hm, hf = problem.mu.hess(x), problem.f.hess(x)
        G = np.array([float(problem.mu.eval(x)), float(gf @ J @ gm)])
        if np.max(np.abs(G)) < tol.newton_tol:
            return wrap_angles(x)
        jac = np.vstack([gm, hf @ J @ gm - hm @ J @ gf])
        x = x - np.linalg.solve(jac, G)
    raise TraceFailure(f"Restricted critical point refinement failed near {np.asarray(x).tolist()}")


def level_set_geometry(problem: Problem, grid=128, step=None) -> LevelSetGeometry:
    components = trace_level_set(problem, grid, step)
    crit = []
    min_grad = float('inf')
    for ci, c in enumerate(components):
        min_grad = min(min_grad, float(np.min(np.linalg.norm(problem.mu.grad(c), axis=1))))
        seg = np.linalg.norm(torus_delta(np.roll(c, -1, axis=0), c), axis=1)
        s_nodes = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
        d = np.array([_tangential(problem, x) for x in c])
        found = []
        for i in np.nonzero(np.sign(d) != np.sign(np.roll(d, -1)))[0]:
            x = _restricted_newton(problem, c[i])
            if any(np.linalg.norm(torus_delta(x, y)) < problem.tol.dedupe_radius for y, _ in found):
                continue
            found.append((x, s_nodes[i]))
        for x, s in found:
            t = J @ problem.mu.grad(x)
            t /= np.linalg.norm(t)
            second = float(t @ hess_f_eta(problem, x, zeta(problem, x)) @ t)
            crit.append(RestrictedCrit('', (float(x[0]), float(x[1])), 0 if second > 0 else 1, ci, float(s)))
    crit.sort(key=lambda r: (r.component, r.s))
    crit = [RestrictedCrit(f"r{i}", r.x, r.index, r.component, r.s) for i, r in enumerate(crit)]
    geometry = LevelSetGeometry(components, crit, min_grad)
    for ci in range(len(components)):
        ring = geometry.crit_on(ci)
        if len(ring) > 1 and any(a.index == b.index for a, b in zip(ring, ring[1:] + ring[:1])):
            raise TraceFailure(f"Restricted critical points do not alternate on component {ci}")
    return geometry


@dataclass(frozen=True)
class LevelSetTopology:
    count: int
    lengths: tuple

    def to_json(self):
        return {'count': self.count, 'lengths': list(self.lengths)}


def level_set_topology(problem: Problem, grid=128) -> LevelSetTopology:
    components = trace_level_set(problem, grid)
    lengths = LevelSetGeometry(components, [], 0.0).lengths
    return LevelSetTopology(len(components), tuple(sorted(lengths)))


def build_restricted_complex(problem: Problem, geometry=None):
    geometry = geometry or level_set_geometry(problem)
    generators = {0: [r.id for r in geometry.crit if r.index == 0],
                  1: [r.id for r in geometry.crit if r.index == 1]}
    entries = set()
    for ci in range(len(geometry.components)):
        ring = geometry.crit_on(ci)
        for i, r in enumerate(ring):
            if r.index != 1:
                continue
            for nb in (ring[i - 1], ring[(i + 1) % len(ring)]):
                entries ^= {(r.id, nb.id)}
    complex_ = Z2ChainComplex.build(generators, entries, Provenance('restricted'))
    logger.info(f"Restricted complex: betti={complex_.betti()}")
    return complex_, geometry


def canonical_bijection(crit: Sequence[CritPointF], geometry: LevelSetGeometry, radius=1e-6):
    """Map Crit(F) ids to restricted ids via (x, η) ↦ x."""
    out = {}
    for p in crit:
        match = [r for r in geometry.crit if np.linalg.norm(torus_delta(r.x, p.x)) < radius]
        if len(match) != 1:
            raise BijectionMismatch(f"{p.id} matches {len(match)} restricted critical points")
        if p.index_F != match[0].index + 1:
            raise BijectionMismatch(f"{p.id} has index {p.index_F}, {match[0].id} has {match[0].index}")
        out[p.id] = match[0].id
    if len(set(out.values())) != len(geometry.crit):
        raise BijectionMismatch(f"{len(crit)} critical points of F, {len(geometry.crit)} restricted")
    return out


def _graded(crit):
    gens = {}
    for p in sorted(crit, key=lambda c: c.id):
        gens.setdefault(p.index_F, []).append(p.id)
    return gens


def build_complex_lambda(problem: Problem, lam: float, crit=None, workers=1, seeds=()) -> Z2ChainComplex:
    """Z/2 complex of the λ-flow; seeds feed collocation where shooting cannot resolve exit angles."""
    from .orbits import boundary_lambda

    crit = crit if crit is not None else find_crit_F(problem)
    connections = boundary_lambda(problem, lam, crit, workers, seeds)
    entries = {pair for pair, found in connections.items() if len(found) % 2}
    complex_ = Z2ChainComplex.build(_graded(crit), entries, Provenance('lambda', lam), connections)
    logger.info(f"lambda={lam:g}: betti={complex_.betti()}")
    return complex_


def build_complex_zero(problem: Problem, catalog) -> Z2ChainComplex:
    from .orbits import enumerate_fast_slow

    crit = list(catalog.crit)
    problem = problem.with_eta_max(catalog.eta_max)
    sequences, entries = {}, set()
    for p in crit:
        for q in crit:
            if p.index_F != q.index_F + 1:
                continue
            seqs = enumerate_fast_slow(problem, p, q, catalog)
            if seqs:
                sequences[(p.id, q.id)] = seqs
            if len(seqs) % 2:
                entries.add((p.id, q.id))
    complex_ = Z2ChainComplex.build(_graded(crit), entries, Provenance('zero'), sequences)
    logger.info(f"Fast-slow complex: betti={complex_.betti()}")
    return complex_


@dataclass
class ComparisonReport:
    betti_equal: bool
    boundary_equal: bool
    betti_a: dict
    betti_b: dict
    mismatches: list

    @property
    def equal(self):
        return self.betti_equal and self.boundary_equal

    def to_json(self):
        return {'betti_equal': self.betti_equal, 'boundary_equal': self.boundary_equal,
                'betti_a': {str(k): v for k, v in self.betti_a.items()},
                'betti_b': {str(k): v for k, v in self.betti_b.items()},
                'mismatches': self.mismatches}


def compare_shifted(ca: Z2ChainComplex, cb: Z2ChainComplex, bijection=None, shift=0) -> ComparisonReport:
    """Compare ca in degree k with cb in degree k − shift under a generator bijection."""
    if bijection is None:
        bijection = {g: g for gens in ca.generators.values() for g in gens}
    for k in sorted(set(ca.generators) | {k + shift for k in cb.generators}):
        mapped = sorted(bijection.get(g) or '' for g in ca.generators.get(k, ()))
        target = sorted(cb.generators.get(k - shift, ()))
        if mapped != target:
            raise BijectionMismatch(f"Degree {k}: {len(mapped)} generators vs {len(target)} in degree {k - shift}",
                                    mapped=mapped, target=target)
    mismatches = []
    for k, gens in ca.generators.items():
        for p in gens:
            for q in ca.generators.get(k - 1, ()):
                a, b = ca.coefficient(p, q), cb.coefficient(bijection[p], bijection[q])
                if a != b:
                    mismatches.append({'p': p, 'q': q, 'a': a, 'b': b})
    betti_a = ca.betti()
    betti_b = {k + shift: v for k, v in cb.betti().items()}
    keys = set(betti_a) | set(betti_b)
    betti_equal = all(betti_a.get(k, 0) == betti_b.get(k, 0) for k in keys)
    if mismatches:
        logger.warning(f"{ca.provenance} vs {cb.provenance}: {len(mismatches)} boundary entries differ")
    return ComparisonReport(betti_equal, not mismatches, betti_a, betti_b, mismatches)
