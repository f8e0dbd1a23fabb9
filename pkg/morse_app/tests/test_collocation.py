import numpy as np
from django.test import SimpleTestCase, tag

from morse_app.collocation import Seed, arc_seeds, eigenplane, fast_slow_seeds, lift_path, seeds_for, solve_connection
from morse_app.critical import find_crit_F
from morse_app.field import F_value, TWO_PI, default_problem
from morse_app.homology import build_restricted_complex, canonical_bijection


class LiftPathTest(SimpleTestCase):
    def test_crossing_the_seam(self):
        """Test a polyline through x1 = 0 is unrolled into continuous coordinates"""
        pts = np.array([[TWO_PI - 0.1, 1.0, 0.0], [TWO_PI - 0.05, 1.0, 0.0], [0.0, 1.0, 0.0], [0.05, 1.0, 0.0]])
        lifted = lift_path(pts, [TWO_PI - 0.1, 1.0])
        np.testing.assert_allclose(np.diff(lifted[:, 0]), 0.05, atol=1e-12)
        self.assertAlmostEqual(lifted[0, 0], TWO_PI - 0.1)

    def test_start_follows_reference_lift(self):
        """Test the first node is taken nearest to the reference point"""
        lifted = lift_path([[0.1, 0.2, 0.0], [0.2, 0.2, 0.0]], [TWO_PI + 0.1, 0.2])
        self.assertAlmostEqual(lifted[0, 0], TWO_PI + 0.1)


class SeedTest(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.problem = default_problem()
        cls.crit = find_crit_F(cls.problem)
        _, cls.geometry = build_restricted_complex(cls.problem)
        cls.bijection = canonical_bijection(cls.crit, cls.geometry)

    def test_eigenplane_dimensions(self):
        """Test the unstable plane has index_F unit columns"""
        for p in self.crit:
            plane = eigenplane(self.problem, p, 2.0)
            self.assertEqual(plane.shape, (3, p.index_F))
            np.testing.assert_allclose(np.linalg.norm(plane, axis=0), 1.0)
            self.assertEqual(eigenplane(self.problem, p, 2.0, unstable=False).shape, (3, 3 - p.index_F))

    def test_arc_seeds_join_ring_neighbours(self):
        """Test two arcs leave every index-2 point and end on lower-index points"""
        seeds = arc_seeds(self.problem, self.geometry, self.bijection)
        by_id = {p.id: p for p in self.crit}
        tops = [p for p in self.crit if p.index_F == 2]
        self.assertEqual(len(seeds), 2 * len(tops))
        for seed in seeds:
            self.assertEqual(by_id[seed.p].index_F, 2)
            self.assertEqual(by_id[seed.q].index_F, 1)
            self.assertEqual(seed.origin, 'level-set')
            np.testing.assert_allclose(seed.points[0], by_id[seed.p].as_array(), atol=1e-5)
            np.testing.assert_allclose(np.abs(self.problem.mu.eval(seed.points[:, :2])), 0.0, atol=1e-6)

    def test_seeds_for_picks_the_near_limit(self):
        """Test arc seeds only at large lambda and fast-slow seeds only at small lambda"""
        self.assertEqual(seeds_for(self.problem, 0.5, self.geometry, self.bijection, {}), [])
        self.assertTrue(seeds_for(self.problem, 8.0, self.geometry, self.bijection, {}))
        self.assertEqual(seeds_for(self.problem, 0.1, self.geometry, self.bijection, {}), [])

    def test_fast_slow_seeds(self):
        """Test fast-slow seeds carry the image of each orbit"""
        image = np.zeros((4, 3))

        class Orbit:
            p, q = 'c0', 'c1'

            def image(self):
                return image

        seeds = fast_slow_seeds({('c0', 'c1'): [Orbit()]})
        self.assertEqual([(s.p, s.q, s.origin) for s in seeds], [('c0', 'c1', 'fast-slow')])
        self.assertIs(seeds[0].points, image)


@tag('slow')
class SolveConnectionTest(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.problem = default_problem()
        cls.crit = find_crit_F(cls.problem)
        _, geometry = build_restricted_complex(cls.problem)
        cls.seeds = arc_seeds(cls.problem, geometry, canonical_bijection(cls.crit, geometry))
        cls.by_id = {p.id: p for p in cls.crit}

    def test_large_lambda_orbit_from_level_set_arc(self):
        """Test collocation at lambda = 8 turns an arc of mu^-1(0) into a descending orbit"""
        problem = self.problem.with_eta_max(20.0)
        seed = self.seeds[0]
        orbit = solve_connection(problem, 8.0, self.by_id[seed.p], self.by_id[seed.q], seed, self.crit)
        self.assertIsNotNone(orbit)
        values = F_value(problem, orbit.witness.y)
        self.assertTrue(np.all(np.diff(values) <= 1e-6))
        self.assertEqual(orbit.witness.terminal.target, seed.q)
        self.assertLess(orbit.witness.energy_residual(), 1e-3)
        self.assertLess(float(np.max(np.abs(problem.mu.eval(orbit.witness.y[:, :2])))), 0.2)

    def test_short_seed_is_refused(self):
        """Test a seed that never leaves the end balls gives no orbit"""
        p = next(c for c in self.crit if c.index_F == 2)
        q = next(c for c in self.crit if c.index_F == 1)
        seed = Seed(p.id, q.id, np.array([p.as_array(), p.as_array()]), 'level-set')
        self.assertIsNone(solve_connection(self.problem, 8.0, p, q, seed, self.crit))
