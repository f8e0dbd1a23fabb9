from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase, tag

from morse_app.critical import fast_index, find_crit_F
from morse_app.exceptions import NotFound
from morse_app.field import Problem, TorusField, default_problem, hess_f_eta
from morse_app.slow import (
    EndpointKind, MarkerKind, branch_by_id, check_slow_hyperbolicity, fast_newton, fold_derivative, fold_local_model,
    points_at_eta, short_orbit, slow_sign_changes, slow_velocity, trace_slow_manifold, unit_tangent, x_at,
)


def tangent_problem():
    """f = cos x1 + cos x2, mu = sin x1: C_F is x1 = atan(eta) mod pi, x2 in {0, pi}, without folds."""
    f = TorusField.from_terms([((1, 0), 1.0, 0.0), ((0, 1), 1.0, 0.0)])
    mu = TorusField.from_terms([((1, 0), 0.0, 1.0)])
    return Problem(f=f, mu=mu)


def cubic_fold_problem():
    """At x = 0, eta = 0 the fast flow along x1 reads z' = -eta + z**2 + O(3)."""
    f = TorusField.from_terms([((1, 0), 0.0, -2.0 / 3.0), ((2, 0), 0.0, 1.0 / 3.0), ((0, 1), 1.0, 0.0)])
    mu = TorusField.from_terms([((1, 0), 0.0, 1.0), ((0, 1), 1.0, 0.0)])
    return Problem(f=f, mu=mu)


class UnitTangentTest(SimpleTestCase):
    def test_eta_component_is_hessian_determinant_sign(self):
        """Test the tangent is a unit kernel vector whose eta part follows det Hess f_eta"""
        problem = tangent_problem()
        y = np.array([np.arctan(0.5), 0.0, 0.5])
        t = unit_tangent(problem, y)
        self.assertAlmostEqual(float(np.linalg.norm(t)), 1.0)
        det = np.linalg.det(hess_f_eta(problem, y[:2], y[2]))
        self.assertEqual(np.sign(t[2]), np.sign(det))


class FoldFreeTraceTest(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.problem = tangent_problem()
        cls.crit = find_crit_F(cls.problem)
        cls.branches, cls.folds = trace_slow_manifold(cls.problem, cls.crit)

    def test_four_cutoff_branches(self):
        """Test four graphs over eta and no folds"""
        self.assertEqual(len(self.crit), 4)
        self.assertEqual(self.folds, [])
        self.assertEqual(len(self.branches), 4)
        for b in self.branches:
            self.assertEqual(b.lo.kind, EndpointKind.ETA_CUTOFF)
            self.assertEqual(b.hi.kind, EndpointKind.ETA_CUTOFF)
            self.assertTrue(np.all(np.diff(b.nodes[:, 2]) > 0))

    def test_fast_indices(self):
        """Test the branches carry fast indices 0, 1, 1, 2"""
        self.assertEqual(sorted(b.fast_index for b in self.branches), [0, 1, 1, 2])
        for b in self.branches:
            mid = b.nodes[len(b.nodes) // 2]
            self.assertEqual(fast_index(self.problem, mid[:2], mid[2]), b.fast_index)

    def test_x_at_matches_closed_form(self):
        """Test x_at solves tan x1 = eta on every branch"""
        for b in self.branches:
            x = x_at(self.problem, b, 0.5)
            self.assertLess(abs(-np.sin(x[0]) + 0.5 * np.cos(x[0])), 1e-10)
            self.assertLess(abs(np.sin(x[1])), 1e-10)

    def test_each_critical_point_marked_once(self):
        """Test Crit(F) markers on the branches"""
        marked = [m.ref for b in self.branches for m in b.markers if m.kind is MarkerKind.CRIT]
        self.assertEqual(sorted(marked), sorted(p.id for p in self.crit))

    def test_points_at_eta(self):
        """Test one point per branch over a regular eta"""
        found = points_at_eta(self.problem, self.branches, 1.0)
        self.assertEqual(len(found), 4)

    def test_slow_velocity(self):
        """Test eta' = -mu on the branch"""
        b = self.branches[0]
        node = b.nodes[10]
        self.assertAlmostEqual(slow_velocity(self.problem, b, 10), -float(np.sin(node[0])))

    def test_slow_velocity_changes_sign_only_at_markers(self):
        """Test eta' = -mu flips sign across the Crit(F) marker and nowhere else"""
        for b in self.branches:
            changes = slow_sign_changes(self.problem, b)
            self.assertEqual(len(changes), 1)
            lo, hi = changes[0]
            self.assertEqual(len(b.crit_markers), 1)
            self.assertLessEqual(lo, b.crit_markers[0].eta)
            self.assertGreaterEqual(hi, b.crit_markers[0].eta)

    def test_slow_hyperbolicity(self):
        """Test d mu/d eta is +-1 at eta = 0 and no sign change is unaccounted for"""
        margin, mismatches = check_slow_hyperbolicity(self.problem, self.branches)
        self.assertEqual(mismatches, [])
        self.assertAlmostEqual(margin, 1.0, places=4)

    def test_unmarked_sign_change_is_reported(self):
        """Test a branch without its Crit(F) marker is flagged"""
        bare = [replace(b, markers=()) for b in self.branches]
        _, mismatches = check_slow_hyperbolicity(self.problem, bare)
        self.assertEqual(len(mismatches), 4)

    def test_x_at_out_of_range(self):
        """Test x_at outside the branch raises NotFound"""
        b = self.branches[0]
        with self.assertRaises(NotFound):
            x_at(self.problem, b, b.eta_hi + 1.0)

    def test_branch_by_id(self):
        """Test lookup by id"""
        self.assertIs(branch_by_id(self.branches, 'b2'), self.branches[2])
        with self.assertRaises(NotFound):
            branch_by_id(self.branches, 'missing')

    def test_csv_rows(self):
        """Test branch rows carry arclength, d_C and mu"""
        b = self.branches[0]
        rows = list(b.csv_rows(self.problem))
        self.assertEqual(len(rows), len(b.nodes))
        self.assertEqual(rows[0][0], 0.0)
        self.assertEqual(len(rows[0]), 6)


class FoldNormalFormTest(SimpleTestCase):
    def test_unit_coefficients(self):
        """Test the normal form of z' = -eta + z**2 has |c| = |d| = 1"""
        c, d = fold_local_model(cubic_fold_problem(), np.zeros(3))
        self.assertAlmostEqual(abs(c), 1.0)
        self.assertAlmostEqual(abs(d), 1.0)
        self.assertAlmostEqual(c * d, -1.0)


class FastNewtonTest(SimpleTestCase):
    def test_converges_nearby(self):
        """Test fast_newton refines a nearby critical point of f_eta"""
        problem = tangent_problem()
        x = fast_newton(problem, np.array([0.4, 0.1]), 0.5)
        self.assertIsNotNone(x)
        self.assertAlmostEqual(float(x[0]), float(np.arctan(0.5)))


@tag('slow')
class DefaultFoldTest(SimpleTestCase):
    """The built-in problem is separable, so its folds sit in the x2 direction."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.problem = default_problem()
        cls.crit = find_crit_F(cls.problem)
        cls.branches, cls.folds = trace_slow_manifold(cls.problem, cls.crit)

    def test_folds_found_in_pairs(self):
        """Test each x2-fold appears over both x1 critical points"""
        self.assertGreaterEqual(len(self.folds), 4)
        self.assertEqual(len(self.folds) % 2, 0)
        self.assertEqual({f.lower_index for f in self.folds}, {0, 1})

    def test_fold_equations(self):
        """Test folds solve grad f_eta = 0 and det Hess f_eta = 0"""
        for fold in self.folds:
            g = self.problem.f.grad(fold.x) + fold.eta * self.problem.mu.grad(fold.x)
            self.assertLess(np.linalg.norm(g), 1e-9)
            self.assertLess(abs(np.linalg.det(hess_f_eta(self.problem, fold.x, fold.eta))), 1e-8)
            self.assertLess(abs(fold.v[0]), 1e-6)
            self.assertGreater(abs(fold.c), 1e-6)
            self.assertGreater(abs(fold.d), 1e-6)
            self.assertGreater(abs(fold_derivative(self.problem, fold)), 1e-6)

    def test_local_model(self):
        """Test the normal form matches the stored fold and the branch parabola"""
        for fold in self.folds:
            c, d = fold_local_model(self.problem, fold)
            self.assertAlmostEqual(c, fold.c)
            self.assertAlmostEqual(d, fold.d)
            self.assertGreater(d, 0.0)
            self.assertLess(fold.consistency, 0.05)

    def test_branches_meet_at_folds(self):
        """Test each fold joins a branch of index l and one of index l + 1"""
        for fold in self.folds:
            upper = branch_by_id(self.branches, fold.upper_branch)
            lower = branch_by_id(self.branches, fold.lower_branch)
            self.assertEqual(upper.fast_index, fold.lower_index + 1)
            self.assertEqual(lower.fast_index, fold.lower_index)

    def test_eta_monotone_between_folds(self):
        """Test branch nodes are sorted by eta"""
        for b in self.branches:
            self.assertTrue(np.all(np.diff(b.nodes[:, 2]) >= 0))

    def test_short_orbit_crosses_fold(self):
        """Test the short orbit runs from the upper to the lower branch at fixed eta"""
        fold = self.folds[0]
        traj = short_orbit(self.problem, fold, 0.02)
        self.assertTrue(traj.terminal.converged)
        self.assertEqual(traj.terminal.target, 'lower' if fold.lower_index == 0 else 'upper')
        np.testing.assert_allclose(traj.y[:, 2], fold.eta - (fold.d / fold.c) * 0.02 ** 2)

    def test_short_orbit_descends(self):
        """Test f_eta decreases along the short orbit and the energy spent grows strictly"""
        fold = self.folds[0]
        traj = short_orbit(self.problem, fold, 0.02)
        values = self.problem.f_eta(traj.y[0, 2]).eval(traj.y[:, :2])
        self.assertTrue(np.all(np.diff(values) <= 1e-13))
        self.assertLess(values[-1], values[0])
        self.assertTrue(np.all(np.diff(traj.energy) > 0))
        self.assertLess(traj.energy_residual(), 1e-6)

    def test_short_orbit_parameter_range(self):
        """Test short_orbit rejects s outside (0, eps0]"""
        with self.assertRaises(NotFound):
            short_orbit(self.problem, self.folds[0], 0.0)
        with self.assertRaises(NotFound):
            short_orbit(self.problem, self.folds[0], 1.0)
