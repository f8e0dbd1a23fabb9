"""Scalar fields on the flat 2-torus and the Lagrange-multiplier function.

A TorusField is a finite Fourier sum, so values and derivatives of every
order are evaluated term by term. The flat metric is the identity, hence
gradients are plain partial-derivative vectors.
"""
import logging
from dataclasses import dataclass, field as dc_field, replace
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import ConfigError, NearCriticalMu

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def wrap_angles(x):
    """Reduce angle coordinates into [0, 2π)."""
    x = np.mod(np.asarray(x, dtype=float), TWO_PI)
    # np.mod rounds tiny negative angles up to exactly 2π
    return np.where(x >= TWO_PI, 0.0, x)[()]


def torus_delta(a, b):
    """Shortest signed difference a - b on the torus, componentwise in (-π, π]."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return d - TWO_PI * np.round(d / TWO_PI)


def extended_distance(p, q):
    """Distance on T² × ℝ between two (x1, x2, eta) arrays."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    dx = torus_delta(p[..., :2], q[..., :2])
    deta = p[..., 2] - q[..., 2]
    return np.sqrt(np.sum(dx * dx, axis=-1) + deta * deta)


@dataclass(frozen=True, eq=False)
class TorusField:
    """x ↦ Σ a_k cos⟨k,x⟩ + b_k sin⟨k,x⟩ on ℝ²/2πℤ²."""

    wavevectors: np.ndarray
    cos_coeffs: np.ndarray
    sin_coeffs: np.ndarray

    @classmethod
    def from_terms(cls, terms: Iterable[Tuple[Sequence[int], float, float]]):
        merged = {}
        for k, a, b in terms:
            key = (int(k[0]), int(k[1]))
            if len(k) != 2:
                raise ConfigError(f"Wave vector must have two entries, got {k}")
            prev = merged.get(key, (0.0, 0.0))
            merged[key] = (prev[0] + float(a), prev[1] + float(b))
        keys = sorted(merged)
        if not keys:
            return cls(np.zeros((0, 2), dtype=int), np.zeros(0), np.zeros(0))
        return cls(
            np.array(keys, dtype=int).reshape(-1, 2),
            np.array([merged[k][0] for k in keys], dtype=float),
            np.array([merged[k][1] for k in keys], dtype=float),
        )

    @classmethod
    def from_json(cls, data):
        try:
            return cls.from_terms((item['k'], item.get('a', 0.0), item.get('b', 0.0)) for item in data)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid field term list: {e}") from e

    def to_json(self):
        return [
            {'k': [int(k[0]), int(k[1])], 'a': float(a), 'b': float(b)}
            for k, a, b in zip(self.wavevectors, self.cos_coeffs, self.sin_coeffs)
        ]

    @property
    def terms(self):
        return [(tuple(int(v) for v in k), float(a), float(b))
                for k, a, b in zip(self.wavevectors, self.cos_coeffs, self.sin_coeffs)]

    def combine(self, other: 'TorusField', eta: float) -> 'TorusField':
        """Return self + eta * other as a new Fourier sum (f_η when self=f, other=μ)."""
        scaled = [(k, eta * a, eta * b) for k, a, b in other.terms]
        return TorusField.from_terms(list(self.terms) + scaled)

    def _phase(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.wavevectors.T.astype(float)

    def eval(self, x):
        phase = self._phase(x)
        return np.cos(phase) @ self.cos_coeffs + np.sin(phase) @ self.sin_coeffs

    def grad(self, x):
        phase = self._phase(x)
        w = -self.cos_coeffs * np.sin(phase) + self.sin_coeffs * np.cos(phase)
        return w @ self.wavevectors.astype(float)

    def hess(self, x):
        phase = self._phase(x)
        w = -self.cos_coeffs * np.cos(phase) - self.sin_coeffs * np.sin(phase)
        k = self.wavevectors.astype(float)
        return np.einsum('...m,mi,mj->...ij', w, k, k)

    def third(self, x):
        phase = self._phase(x)
        w = self.cos_coeffs * np.sin(phase) - self.sin_coeffs * np.cos(phase)
        k = self.wavevectors.astype(float)
        return np.einsum('...m,mi,mj,ml->...ijl', w, k, k, k)

    def gradient_bound(self):
        """Upper bound for ‖∇field‖ over the torus."""
        norms = np.linalg.norm(self.wavevectors.astype(float), axis=1)
        return float(np.sum(norms * (np.abs(self.cos_coeffs) + np.abs(self.sin_coeffs))))


@dataclass(frozen=True, eq=False)
class ExtendedPoint:
    """A point (x, η) of T² × ℝ with x stored reduced mod 2π."""

    x: Tuple[float, float]
    eta: float

    def __post_init__(self):
        reduced = wrap_angles(self.x)
        object.__setattr__(self, 'x', (float(reduced[0]), float(reduced[1])))
        object.__setattr__(self, 'eta', float(self.eta))

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls((arr[0], arr[1]), arr[2])

    def as_array(self):
        return np.array([self.x[0], self.x[1], self.eta])


@dataclass(frozen=True)
class Tolerances:
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    dedupe_radius: float = 1e-6
    degenerate_eig: float = 1e-8
    mu_grad_tol: float = 1e-8
    seed_grid: int = 64
    rtol: float = 1e-10
    atol: float = 1e-12
    scan_rtol: float = 1e-8
    basin_factor: float = 0.05
    contraction_steps: int = 20
    converge_tol: float = 1e-7
    max_time: float = 1e6
    max_steps: int = 200000
    continuation_step: float = 0.01
    continuation_tol: float = 1e-10
    min_step: float = 1e-6
    max_nodes: int = 200000
    trace_margin: float = 3.0
    eta_seed_count: int = 9
    n_angles: int = 128
    shooting_radius: float = 1e-4
    angle_tol: float = 1e-10
    attribution_tol: float = 1e-3
    eta_scan: int = 200
    eta_root_tol: float = 1e-10
    fold_delta: float = 1e-3
    fold_capture_radius: float = 1e-2
    fold_converge_tol: float = 1e-4
    short_orbit_eps0: float = 0.05
    transversality_tol: float = 1e-6
    assumption_tol: float = 1e-6
    proximity_tol: float = 0.1
    max_path_length: int = 64
    scan_max_steps: int = 20000
    eta_scan_stride: int = 8
    angle_offset: float = 0.0
    speed_floor: float = 1e-6
    collocation_radius: float = 1e-3
    collocation_tol: float = 1e-6
    collocation_max_nodes: int = 20000
    orbit_match_tol: float = 0.02
    arc_seed_lambda: float = 1.0
    fast_slow_seed_lambda: float = 0.25

    def halved(self):
        """Integration tolerances halved, everything else kept."""
        return replace(self, rtol=self.rtol / 2, atol=self.atol / 2, scan_rtol=self.scan_rtol / 2)


@dataclass(frozen=True, eq=False)
class Problem:
    f: TorusField
    mu: TorusField
    tol: Tolerances = dc_field(default_factory=Tolerances)
    eta_max: Optional[float] = None

    def with_eta_max(self, eta_max):
        return replace(self, eta_max=float(eta_max))

    def with_tolerances(self, **overrides):
        return replace(self, tol=replace(self.tol, **overrides))

    def f_eta(self, eta):
        return self.f.combine(self.mu, eta)


def default_fields():
    """μ = cos x₁ + 0.5 cos x₂ and f = cos(x₁−0.4) + 0.8 cos(x₂−1.1) + 0.3 cos 2x₂."""
    mu = TorusField.from_terms([((1, 0), 1.0, 0.0), ((0, 1), 0.5, 0.0)])
    f = TorusField.from_terms([
        ((1, 0), np.cos(0.4), np.sin(0.4)),
        ((0, 1), 0.8 * np.cos(1.1), 0.8 * np.sin(1.1)),
        ((0, 2), 0.3, 0.0),
    ])
    return f, mu


def default_problem(tol: Optional[Tolerances] = None):
    f, mu = default_fields()
    return Problem(f=f, mu=mu, tol=tol or Tolerances())


def _split(p):
    arr = p.as_array() if isinstance(p, ExtendedPoint) else np.asarray(p, dtype=float)
    return arr[..., :2], arr[..., 2]


def F_value(problem: Problem, p):
    x, eta = _split(p)
    return problem.f.eval(x) + eta * problem.mu.eval(x)


def grad_F(problem: Problem, p, lam: float):
    """Right-hand side (−(∇f + η∇μ), −λ²μ) of the λ-flow."""
    x, eta = _split(p)
    gx = problem.f.grad(x) + np.expand_dims(eta, -1) * problem.mu.grad(x)
    geta = lam * lam * problem.mu.eval(x)
    return -np.concatenate([gx, np.expand_dims(geta, -1)], axis=-1)


def hess_f_eta(problem: Problem, x, eta):
    return problem.f.hess(x) + np.expand_dims(eta, (-1, -2)) * problem.mu.hess(x)


def hess_F(problem: Problem, x, eta):
    """Bordered Hessian D²F at (x, η) in the flat metric."""
    h = hess_f_eta(problem, x, eta)
    g = problem.mu.grad(x)
    out = np.zeros(np.shape(h)[:-2] + (3, 3))
    out[..., :2, :2] = h
    out[..., :2, 2] = g
    out[..., 2, :2] = g
    return out


def zeta(problem: Problem, x):
    """Multiplier ζ(x) making ∇f + ζ∇μ orthogonal to ∇μ."""
    gm = problem.mu.grad(x)
    norm2 = float(gm @ gm)
    if np.sqrt(norm2) < problem.tol.mu_grad_tol:
        raise NearCriticalMu(f"|grad mu| = {np.sqrt(norm2):.3e} at x={np.asarray(x).tolist()}")
    return -float(gm @ problem.f.grad(x)) / norm2


def torus_tree(points, eta_bound):
    """KD-tree over (x1, x2, η) points, periodic in x, for |η| < eta_bound."""
    pts = tree_query_points(points, eta_bound)
    return cKDTree(pts, boxsize=[TWO_PI, TWO_PI, 2.0 * eta_bound])


def tree_query_points(points, eta_bound):
    """Points shifted into the coordinates used by torus_tree."""
    pts = np.array(points, dtype=float).reshape(-1, 3)
    pts[:, :2] = wrap_angles(pts[:, :2])
    pts[:, 2] = np.clip(pts[:, 2] + eta_bound, 0.0, np.nextafter(2.0 * eta_bound, 0.0))
    return pts
