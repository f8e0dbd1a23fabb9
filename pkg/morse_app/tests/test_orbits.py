from dataclasses import replace
from types import SimpleNamespace
from unittest.mock import patch

import numpy as np
from django.test import SimpleTestCase, tag

from morse_app.collocation import CollocatedOrbit, Seed
from morse_app.critical import CritPointF, SlowType, find_crit_F
from morse_app.exceptions import ConfigError, GraphInconsistency, NonRegularLambda, NotFound
from morse_app.field import ExtendedPoint, TWO_PI, default_problem
from morse_app.flow import Passage, Terminal, TerminalKind, Trajectory
from morse_app.orbits import (
    CASE_PARITY, Connection, FastSlowOrbitSeq, RestPoint, Segment, _check_collisions, _check_speed, _runs, attribute,
    build_catalog, case_tag, check_convergence, connections_from, count_boundary_lambda, distance_to,
    enumerate_fast_slow, hausdorff, itinerary, scan_changes,
)


def make_traj(target=None, passages=(), kind=TerminalKind.CONVERGED):
    t = np.array([0.0, 1.0])
    y = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    terminal = Terminal(kind, target) if kind is TerminalKind.CONVERGED else Terminal(kind)
    return Trajectory(lam=1.0, t=t, y=y, dy=np.zeros((2, 3)), energy=np.array([0.0, 1.0]),
                      terminal=terminal, F_start=1.0, F_end=0.0, passages=tuple(passages))


def make_crit(ident, index_F, slow_type, F, eta=0.0):
    fast = index_F - (1 if slow_type is SlowType.REPELLER else 0)
    return CritPointF(id=ident, point=ExtendedPoint((0.0, 0.0), eta), index_F=index_F, fast_index=fast,
                      slow_type=slow_type, hessian_eigs=(1.0, 1.0, 1.0), slow_eigenvalue=1.0,
                      fast_degenerate=False, F=F)


def limit_for(ident):
    return None if ident == 'sink' else 1e-3


class ItineraryTest(SimpleTestCase):
    def test_itinerary_lists_passages_then_terminal(self):
        """Test labels combine saddle passages with the terminal"""
        traj = make_traj('sink', [Passage('s1', 1, 0.01, 0.0), Passage('s2', -1, 0.02, 0.0)])
        self.assertEqual(itinerary(traj), (('s1', 1), ('s2', -1), ('sink', 0)))

    def test_escape_label(self):
        """Test escaping trajectories end with the escape kind"""
        traj = make_traj(kind=TerminalKind.ESCAPE_PLUS)
        self.assertEqual(itinerary(traj), (('escape_plus_eta', 0),))

    def test_distance_to(self):
        """Test closest approach to a saddle and to the terminal"""
        traj = make_traj('sink', [Passage('s1', 1, 0.01, 0.0), Passage('s1', -1, 0.005, 0.0)])
        self.assertEqual(distance_to(traj, 's1'), 0.005)
        self.assertEqual(distance_to(traj, 'sink'), 0.0)
        self.assertEqual(distance_to(traj, 'other'), float('inf'))


class AttributeTest(SimpleTestCase):
    def test_side_change_at_saddle(self):
        """Test a side flip at a close saddle is attributed to it"""
        ta = make_traj('a', [Passage('s', 1, 1e-5, 0.0)])
        tb = make_traj('b', [Passage('s', -1, 2e-5, 0.0)])
        ident, closest, k = attribute(ta, tb, limit_for)
        self.assertEqual(ident, 's')
        self.assertEqual(closest, 2e-5)
        self.assertEqual(k, 0)

    def test_distant_saddle_not_attributed(self):
        """Test a flip far from the saddle is not a connection"""
        ta = make_traj('a', [Passage('s', 1, 1e-2, 0.0)])
        tb = make_traj('b', [Passage('s', -1, 1e-2, 0.0)])
        self.assertIsNone(attribute(ta, tb, limit_for)[0])

    def test_convergence_versus_passage(self):
        """Test one neighbour converging to the saddle and the other passing it"""
        ta = make_traj('s')
        tb = make_traj('b', [Passage('s', 1, 1e-6, 0.0)])
        self.assertEqual(attribute(ta, tb, limit_for)[0], 's')

    def test_different_terminals(self):
        """Test a change between two sinks has no saddle"""
        self.assertIsNone(attribute(make_traj('a'), make_traj('b'), limit_for)[0])


class ScanChangesTest(SimpleTestCase):
    def evaluate(self, theta):
        return make_traj('a' if theta < 1.0 else 'b')

    def test_bracket_width(self):
        """Test bisection brackets the change at 1.0"""
        params = [0.0, 0.5, 1.5, 2.0]
        results = scan_changes(self.evaluate, params, [self.evaluate(p) for p in params], 1e-8)
        self.assertEqual(len(results), 1)
        (a, b, ta, tb), samples = results[0]
        self.assertLessEqual(b - a, 1e-8)
        self.assertLess(a, 1.0)
        self.assertGreaterEqual(b, 1.0)
        self.assertNotEqual(itinerary(ta), itinerary(tb))

    def test_periodic_wraparound(self):
        """Test the closing pair of a periodic scan is searched"""
        params = [0.5, 2.0]
        results = scan_changes(self.evaluate, params, [self.evaluate(p) for p in params], 1e-6, period=TWO_PI)
        self.assertEqual(len(results), 2)

    def test_skipped_samples(self):
        """Test None samples are ignored"""
        params = [0.0, 0.5, 1.5]
        results = scan_changes(self.evaluate, params, [self.evaluate(0.0), None, self.evaluate(1.5)], 1e-6)
        self.assertEqual(len(results), 1)

    def test_collisions_flag_non_regular_lambda(self):
        """Test nearly coincident connection parameters"""
        found = [Connection('p', 'q', 1.0, 0.1, 0.0, make_traj('q')),
                 Connection('p', 'r', 1.0 + 1e-12, 0.1, 0.0, make_traj('r'))]
        with self.assertRaises(NonRegularLambda):
            _check_collisions(found, 1e-10)


class ScanRunsTest(SimpleTestCase):
    def test_runs_split_where_equilibria_change(self):
        """Test eta samples are grouped by the set of fast equilibria they see"""
        two = [SimpleNamespace(id='b0'), SimpleNamespace(id='b1')]
        four = two + [SimpleNamespace(id='b2'), SimpleNamespace(id='b3')]
        setups = {0.1: (None, two), 0.2: (None, two), 0.3: (None, four), 0.4: (None, four), 0.5: (None, two)}
        self.assertEqual(_runs([0.1, 0.2, 0.3, 0.4, 0.5], setups), [[0.1, 0.2], [0.3, 0.4], [0.5]])


class CountTest(SimpleTestCase):
    def test_non_adjacent_indices(self):
        """Test counting requires index difference one"""
        p = make_crit('p', 2, SlowType.REPELLER, 1.0)
        q = make_crit('q', 2, SlowType.ATTRACTOR, 0.0)
        with self.assertRaises(ConfigError):
            count_boundary_lambda(default_problem(), 1.0, p, q, crit=[p, q])

    def test_no_orbit_uphill(self):
        """Test q above p gives zero without shooting"""
        p = make_crit('p', 2, SlowType.REPELLER, 0.0)
        q = make_crit('q', 1, SlowType.ATTRACTOR, 1.0)
        self.assertEqual(count_boundary_lambda(default_problem(), 1.0, p, q, crit=[p, q]), (0, []))


class WitnessSpeedTest(SimpleTestCase):
    def test_slow_witness_is_reported(self):
        """Test a witness that stalls away from rest points is logged and carried in the JSON"""
        problem = default_problem()
        witness = replace(make_traj('q'), min_speed_outside=problem.tol.speed_floor / 10)
        conn = Connection('p', 'q', 0.5, 0.1, 1e-4, witness)
        with self.assertLogs('morse_app.orbits', level='WARNING') as logs:
            _check_speed(problem, conn, 2.0)
        self.assertIn('p->q', logs.output[0])
        self.assertEqual(conn.to_json()['min_speed'], problem.tol.speed_floor / 10)

    def test_fast_witness_is_quiet(self):
        """Test no warning while the witness keeps its speed"""
        conn = Connection('p', 'q', 0.5, 0.1, 1e-4, replace(make_traj('q'), min_speed_outside=1.0))
        with patch('morse_app.orbits.logger') as mock_logger:
            _check_speed(default_problem(), conn, 2.0)
        mock_logger.warning.assert_not_called()


class ConnectionsFromTest(SimpleTestCase):
    def setUp(self):
        self.problem = default_problem().with_eta_max(10.0)
        self.p = make_crit('p', 2, SlowType.REPELLER, 1.0)
        self.q = make_crit('q', 1, SlowType.ATTRACTOR, 0.0)
        self.seeds = [Seed('p', 'q', np.zeros((3, 3)), 'level-set')]

    def connections(self):
        return connections_from(self.problem, 8.0, self.p, [self.p, self.q], equilibria=[], seeds=self.seeds)

    @patch('morse_app.orbits.collocate', return_value=None)
    @patch('morse_app.orbits.shoot_unstable_circle', return_value=[])
    def test_all_seeds_failing_raises(self, mock_shoot, mock_collocate):
        """Test an empty row is refused when shooting and every seed came up empty"""
        with self.assertRaises(NotFound):
            self.connections()
        mock_collocate.assert_called_once()

    @patch('morse_app.orbits.collocate')
    @patch('morse_app.orbits.shoot_unstable_circle', return_value=[])
    def test_collocated_orbit_fills_row(self, mock_shoot, mock_collocate):
        """Test a collocated orbit becomes a connection when shooting finds none"""
        mock_collocate.return_value = CollocatedOrbit(0.5, make_traj('q'), 1e-9, 'level-set')
        found = self.connections()
        self.assertEqual(list(found), ['q'])
        self.assertEqual(found['q'][0].method, 'collocation')
        self.assertIsNone(found['q'][0].margin)

    @patch('morse_app.orbits.collocate')
    @patch('morse_app.orbits.shoot_unstable_circle')
    def test_shot_orbit_not_counted_twice(self, mock_shoot, mock_collocate):
        """Test a collocated copy of an orbit shooting already found is dropped"""
        mock_shoot.return_value = [Connection('p', 'q', 0.5, 0.1, 0.0, make_traj('q'))]
        mock_collocate.return_value = CollocatedOrbit(0.5, make_traj('q'), 1e-9, 'level-set')
        found = self.connections()
        self.assertEqual(len(found['q']), 1)
        self.assertEqual(found['q'][0].method, 'shooting')

    @patch('morse_app.orbits.shoot_unstable_circle', return_value=[])
    def test_no_seeds_no_connections(self, mock_shoot):
        """Test an index-2 point without seeds may have an empty row"""
        self.seeds = []
        self.assertEqual(self.connections(), {})


class FastSlowSequenceTest(SimpleTestCase):
    def test_case_tags(self):
        """Test the four attractor/repeller combinations"""
        att = make_crit('a', 1, SlowType.ATTRACTOR, 0.0)
        rep = make_crit('r', 1, SlowType.REPELLER, 0.0)
        self.assertEqual(case_tag(att, att), 'I')
        self.assertEqual(case_tag(att, rep), 'II')
        self.assertEqual(case_tag(rep, att), 'III')
        self.assertEqual(case_tag(rep, rep), 'IV')

    def sequence(self, case, kinds, last_direction=1):
        segments = []
        for i, kind in enumerate(kinds):
            direction = 1 if kind == 'slow' else 0
            if i == len(kinds) - 1 and kind == 'slow':
                direction = last_direction
            segments.append(Segment(kind, direction=direction))
        rests = tuple(RestPoint('crit', f"r{i}", 0.0, (0.0, 0.0), -float(i)) for i in range(len(kinds) + 1))
        return FastSlowOrbitSeq('p', 'q', rests, tuple(segments), case)

    def test_parity_rules(self):
        """Test alternation and length parity per case"""
        self.assertTrue(self.sequence('I', ['fast', 'slow']).parity_ok())
        self.assertTrue(self.sequence('II', ['fast']).parity_ok())
        self.assertTrue(self.sequence('III', ['slow']).parity_ok())
        self.assertTrue(self.sequence('IV', ['slow', 'fast']).parity_ok())
        self.assertFalse(self.sequence('I', ['fast']).parity_ok())
        self.assertFalse(self.sequence('III', ['fast']).parity_ok())
        self.assertFalse(self.sequence('II', ['fast', 'fast', 'fast']).parity_ok())

    def test_trivial_end_segment(self):
        """Test a trivial slow segment may not close the sequence"""
        self.assertFalse(self.sequence('I', ['fast', 'slow'], last_direction=0).parity_ok())

    def test_case_table(self):
        """Test the parity table covers all four cases"""
        self.assertEqual(set(CASE_PARITY), {'I', 'II', 'III', 'IV'})

    def test_image_falls_back_to_rests(self):
        """Test image without segment points lists the rest points"""
        seq = self.sequence('II', ['fast'])
        self.assertEqual(seq.image().shape, (2, 3))
        self.assertEqual(seq.n, 1)


class HausdorffTest(SimpleTestCase):
    def test_shifted_curve(self):
        """Test distance between a curve and its eta-shift"""
        s = np.linspace(0.0, 1.0, 50)
        a = np.column_stack([s, s, np.zeros_like(s)])
        b = a + [0.0, 0.0, 0.1]
        self.assertAlmostEqual(hausdorff(a, b), 0.1)

    def test_periodic(self):
        """Test points across x1 = 0 are close"""
        a = np.array([[0.01, 1.0, 0.0]])
        b = np.array([[TWO_PI - 0.01, 1.0, 0.0]])
        self.assertAlmostEqual(hausdorff(a, b), 0.02)


class ConvergenceCheckTest(SimpleTestCase):
    def setUp(self):
        s = np.linspace(0.0, 1.0, 101)
        self.line = np.column_stack([np.ones_like(s), np.ones_like(s), s])
        rests = (RestPoint('crit', 'p', 0.0, (1.0, 1.0), 1.0), RestPoint('crit', 'q', 1.0, (1.0, 1.0), 0.0))
        segment = Segment('slow', branch='b0', direction=1, points=self.line)
        self.fs = FastSlowOrbitSeq('p', 'q', rests, (segment,), 'III')

    def witness(self, offset):
        y = self.line + [offset, 0.0, 0.0]
        dy = np.tile([0.0, 0.0, 1.0], (len(y), 1))
        return Trajectory(lam=0.1, t=y[:, 2].copy(), y=y, dy=dy, energy=np.zeros(len(y)),
                          terminal=Terminal(TerminalKind.CONVERGED, 'q'), F_start=1.0, F_end=0.0)

    def test_shrinking_witnesses(self):
        """Test witnesses approaching the fast-slow orbit pass the check"""
        offsets = {0.4: 0.2, 0.2: 0.1, 0.1: 0.05, 0.05: 0.01}
        witnesses = {lam: [self.witness(off)] for lam, off in offsets.items()}
        report = check_convergence(default_problem(), self.fs, list(offsets), witnesses=witnesses, crit=[])
        self.assertEqual([r['lambda'] for r in report.rows], [0.4, 0.2, 0.1, 0.05])
        for row in report.rows:
            self.assertAlmostEqual(row['distance'], offsets[row['lambda']])
        self.assertTrue(report.decreasing)
        self.assertTrue(report.final_ok)
        self.assertAlmostEqual(report.eta_gap, 0.0)

    def test_growing_witnesses(self):
        """Test witnesses moving away fail the check"""
        witnesses = {0.4: [self.witness(0.01)], 0.05: [self.witness(0.3)]}
        report = check_convergence(default_problem(), self.fs, [0.4, 0.05], witnesses=witnesses, crit=[])
        self.assertFalse(report.decreasing)
        self.assertFalse(report.final_ok)

    def test_missing_witness(self):
        """Test a lambda without orbits leaves an empty row"""
        witnesses = {0.4: [self.witness(0.01)], 0.05: []}
        report = check_convergence(default_problem(), self.fs, [0.4, 0.05], witnesses=witnesses, crit=[])
        self.assertIsNone(report.rows[-1]['distance'])
        self.assertFalse(report.final_ok)
        self.assertEqual(report.eta_gap, float('inf'))


@tag('slow')
class CatalogTest(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.problem = default_problem()
        cls.crit = find_crit_F(cls.problem)
        cls.catalog = build_catalog(cls.problem, cls.crit)

    def test_catalog_contents(self):
        """Test the catalog carries the slow manifold and a confinement bound"""
        self.assertEqual(len(self.catalog.crit), len(self.crit))
        self.assertTrue(self.catalog.folds)
        self.assertGreater(self.catalog.eta_max, max(abs(p.eta) for p in self.crit))
        for fold in self.catalog.folds:
            self.assertIs(self.catalog.fold_by_id(fold.id), fold)

    def test_handle_slides_join_saddle_branches(self):
        """Test every handle-slide runs downhill between two saddle branches at one eta"""
        etas = [hs.eta for hs in self.catalog.handle_slides]
        self.assertEqual(etas, sorted(etas))
        for hs in self.catalog.handle_slides:
            source = self.catalog.branch(hs.source_branch)
            target = self.catalog.branch(hs.target_branch)
            self.assertNotEqual(source.id, target.id)
            self.assertEqual(source.fast_index, 1)
            self.assertEqual(target.fast_index, 1)
            f_eta = self.problem.f_eta(hs.eta)
            self.assertGreater(f_eta.eval(np.array(hs.source_x)), f_eta.eval(np.array(hs.target_x)))
            np.testing.assert_allclose(hs.witness.y[:, 2], hs.witness.y[0, 2])
            self.assertIn(hs.id, [m.ref for m in source.markers])

    def test_cusp_orbits_are_power_law(self):
        """Test every fold-attached orbit decays at a power rate"""
        for cusp in self.catalog.cusp_orbits:
            if cusp.center_jump:
                continue
            self.assertGreaterEqual(cusp.decay, 0.7)
            self.assertLessEqual(cusp.decay, 1.3)

    def test_sequences_follow_structure_rules(self):
        """Test every enumerated fast-slow orbit satisfies parity and descends in F"""
        problem = self.problem.with_eta_max(self.catalog.eta_max)
        for p in self.crit:
            for q in self.crit:
                if p.index_F != q.index_F + 1:
                    continue
                try:
                    seqs = enumerate_fast_slow(problem, p, q, self.catalog)
                except GraphInconsistency as e:
                    self.fail(f"{p.id}->{q.id}: {e}")
                for seq in seqs:
                    self.assertTrue(seq.parity_ok())
                    values = [r.F for r in seq.rests]
                    self.assertTrue(all(b <= a + 1e-9 for a, b in zip(values, values[1:])))
                    self.assertEqual(seq.rests[0].ref, p.id)
                    self.assertEqual(seq.rests[-1].ref, q.id)

    def test_special_etas_reported(self):
        """Test the catalog JSON lists every special eta and their smallest gap"""
        data = self.catalog.to_json()
        expected = len(self.catalog.crit) + len(self.catalog.folds) + len(self.catalog.handle_slides)
        self.assertEqual(len(data['special_etas']), expected)
        self.assertEqual(data['special_etas'], sorted(data['special_etas']))
        self.assertGreater(data['special_eta_gap'], default_problem().tol.assumption_tol)
