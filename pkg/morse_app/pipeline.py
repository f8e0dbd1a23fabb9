"""Experiment orchestration behind the management commands.

A Pipeline owns one RunConfig, memoizes expensive stages through the
result cache, records an ExperimentRun and writes report.json, report.txt,
tables/*.csv and witnesses/*.csv into the output directory.
"""
import logging
import uuid
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.utils import timezone

from . import export
from .collocation import seeds_for
from .config import RunConfig
from .critical import check_assumptions, confinement_bound, crit_shift, crit_table, find_crit_F
from .exceptions import NonRegularLambda, WorkbenchError
from .foldtest import fold_scaling
from .homology import (
    build_complex_lambda, build_complex_zero, build_restricted_complex, canonical_bijection,
    compare_shifted, level_set_topology,
)
from .models import ExperimentRun
from .orbits import build_catalog, check_convergence, detect_handle_slides
from .slow import trace_slow_manifold
from .utils import ResultCache, config_digest

logger = logging.getLogger(__name__)

ENERGY_TOL = 1e-4
FOLD_SLOPE_BAND = (2.0 / 3.0 - 0.05, 2.0 / 3.0 + 0.05)
REFINED_RADIUS = 1e-5


def _verdict(ok):
    return 'pass' if ok else 'fail'


class Pipeline:
    def __init__(self, config: RunConfig, command: str, output_dir=None, use_cache=True):
        self.config = config
        self.command = command
        self.workers = config.workers
        self.digest = config_digest(config.digest_data())
        self.out = Path(output_dir) if output_dir else config.output_dir()
        self.use_cache = use_cache
        self.report = {'command': command, 'digest': self.digest, 'config': config.digest_data()}
        self.checks = {}
        self.lines = []
        self._memo = {}
        self._problem = config.problem()

    # stage results

    def _stage(self, name, compute):
        if name not in self._memo:
            if self.use_cache:
                self._memo[name] = ResultCache.get_or_compute(self.digest, name, compute)
            else:
                self._memo[name] = compute()
        return self._memo[name]

    def crit(self):
        return self._stage('crit', lambda: find_crit_F(self._problem))

    def slow(self):
        return self._stage('slow', lambda: trace_slow_manifold(self._problem, self.crit()))

    def problem(self):
        """The problem with η confined by the bound from Crit(F) and the folds."""
        _, folds = self.slow()
        return self._problem.with_eta_max(confinement_bound(self._problem, self.crit(), folds))

    def handle_slides(self):
        branches, folds = self.slow()
        return self._stage('handle_slides',
                           lambda: detect_handle_slides(self.problem(), branches, folds, self.workers))

    def catalog(self):
        return self._stage('catalog', lambda: build_catalog(self.problem(), self.crit(), self.slow(), self.workers,
                                                            self.handle_slides()))

    def seeds(self, lam):
        """Collocation seeds from the singular limit nearest to λ."""
        tol = self._problem.tol
        geometry = bijection = sequences = None
        try:
            if lam >= tol.arc_seed_lambda:
                _, geometry = self.restricted()
                bijection = canonical_bijection(self.crit(), geometry)
            if lam <= tol.fast_slow_seed_lambda:
                sequences = self.complex_zero().witnesses
        except WorkbenchError as e:
            logger.warning(f"Collocation seeds at lambda={lam:g} unavailable: {e}")
        return seeds_for(self._problem, lam, geometry, bijection, sequences)

    def complex_lambda(self, lam):
        return self._stage(f"complex:{lam!r}",
                           lambda: build_complex_lambda(self.problem(), lam, self.crit(), self.workers,
                                                        self.seeds(lam)))

    def restricted(self):
        return self._stage('restricted', lambda: build_restricted_complex(self._problem))

    def complex_zero(self):
        return self._stage('complex:zero', lambda: build_complex_zero(self.problem(), self.catalog()))

    # report sections

    def check_assumptions(self):
        slow = slides = None
        try:
            slow = self.slow()
            slides = self.handle_slides()
        except WorkbenchError as e:
            logger.error(f"Slow manifold unavailable for the assumption check: {e}")
        report = check_assumptions(self._problem, slow, slides, catalog=self._memo.get('catalog'))
        self.report['assumptions'] = report.to_json()
        self.checks['assumptions'] = report.passed
        self.lines.append(f"assumptions: {_verdict(report.passed)} (failed: {', '.join(report.failed) or 'none'})")
        return report

    def crit_table(self):
        crit = self.crit()
        self.report['crit'] = crit_table(crit)
        export.write_csv(self.out / 'tables' / 'crit.csv',
                         ['x1', 'x2', 'eta', 'index_F', 'fast_index', 'repeller', 'F'],
                         [[p.x[0], p.x[1], p.eta, p.index_F, p.fast_index, int(p.is_repeller), p.F] for p in crit])
        ok = all(p.index_F == p.fast_index + (1 if p.is_repeller else 0) for p in crit)
        self.checks['index_relations'] = ok
        self.lines.append(f"critical points: {len(crit)}; index relations {_verdict(ok)}")
        return crit

    def trace_table(self):
        branches, folds = self.slow()
        self.report['slow_manifold'] = {
            'branches': [b.to_json() for b in branches],
            'folds': [f.to_json() for f in folds],
        }
        for b in branches:
            export.write_csv(self.out / 'tables' / f"branch_{b.id}.csv",
                             ['s', 'x1', 'x2', 'eta', 'd_C', 'mu'], list(b.csv_rows(self._problem)))
        export.write_csv(self.out / 'tables' / 'folds.csv', ['x1', 'x2', 'eta', 'c', 'd', 'lower_index'],
                         [[f.x[0], f.x[1], f.eta, f.c, f.d, f.lower_index] for f in folds])
        self.lines.append(f"slow manifold: {len(branches)} branches, {len(folds)} folds")
        return branches, folds

    def _write_witnesses(self, prefix, complex_, q_values):
        residuals = []
        for (p, q), found in sorted(complex_.witnesses.items()):
            for i, conn in enumerate(found):
                residuals.append(conn.witness.energy_residual(value_end=q_values[q]))
                export.write_trajectory(self.out / 'witnesses' / f"{prefix}_{p}_{q}_{i}.csv",
                                        self._problem, conn.witness)
        return residuals

    def count(self, lam):
        complex_ = self.complex_lambda(lam)
        values = {p.id: p.F for p in self.crit()}
        residuals = self._write_witnesses(f"lambda_{lam:g}", complex_, values)
        worst = max(residuals, default=0.0)
        speed = min((c.witness.min_speed_outside for found in complex_.witnesses.values() for c in found),
                    default=float('inf'))
        if speed < self._problem.tol.speed_floor:
            logger.warning(f"lambda={lam:g}: a witness slows to {speed:.3e} away from every rest point")
        self.report.setdefault('counts', {})[f"{lam:g}"] = {
            'complex': complex_.to_json(),
            'connections': {f"{p}->{q}": [c.to_json() for c in found]
                            for (p, q), found in sorted(complex_.witnesses.items())},
            'max_energy_residual': worst,
            'min_speed_outside': speed,
        }
        ok = worst <= ENERGY_TOL
        self.checks['energy'] = self.checks.get('energy', True) and ok
        self.lines.append(f"lambda={lam:g}: betti {complex_.betti()}, energy residual {worst:.2e}")
        return complex_

    def refine(self, lam):
        """Repeat Crit(F), the fold search and the λ count with finer numerics; nothing may move."""
        problem = self.problem()
        tol = problem.tol
        crit = self.crit()
        base = self.complex_lambda(lam)
        seeds = self.seeds(lam)
        offset = float(self.config.rng().uniform(0.0, np.pi / tol.n_angles))
        variants = {
            'shooting_radius': problem.with_tolerances(shooting_radius=REFINED_RADIUS),
            'angles': problem.with_tolerances(n_angles=2 * tol.n_angles, angle_offset=offset),
            'tolerances': replace(problem, tol=tol.halved()),
        }
        rows = {}
        for name, variant in variants.items():
            try:
                refined = build_complex_lambda(variant, lam, crit, self.workers, seeds)
                rows[name] = compare_shifted(refined, base).equal
            except NonRegularLambda as e:
                logger.warning(f"Refinement {name} at lambda={lam:g} flagged non-regular: {e}")
                rows[name] = False
        shift = crit_shift(crit, find_crit_F(self._problem, grid=2 * tol.seed_grid))
        rows['seed_grid'] = shift < 10 * tol.dedupe_radius
        _, folds = self.slow()
        _, finer = trace_slow_manifold(
            self._problem.with_tolerances(continuation_step=tol.continuation_step / 2), crit)
        rows['continuation_step'] = len(finer) == len(folds)
        self.report.setdefault('refinement', {})[f"{lam:g}"] = {
            'checks': {k: _verdict(v) for k, v in rows.items()},
            'crit_shift': shift,
            'folds': [len(folds), len(finer)],
            'angle_offset': offset,
        }
        ok = all(rows.values())
        self.checks['refinement'] = self.checks.get('refinement', True) and ok
        failed = [k for k, v in rows.items() if not v]
        self.lines.append(f"refinement at lambda={lam:g}: {_verdict(ok)}"
                          + (f" (moved: {', '.join(failed)})" if failed else ''))
        return rows

    def sweep(self, lambdas=None):
        lambdas = sorted(lambdas or self.config.lambdas)
        topology = level_set_topology(self._problem)
        expected = {1: topology.count, 2: topology.count}
        rows, bettis = [], []
        for lam in lambdas:
            try:
                complex_ = self.count(lam)
            except NonRegularLambda as e:
                logger.warning(f"lambda={lam:g} flagged non-regular: {e}")
                rows.append({'lambda': lam, 'regular': False, 'betti': None})
                continue
            betti = complex_.betti()
            bettis.append(betti)
            rows.append({'lambda': lam, 'regular': True, 'betti': {str(k): v for k, v in betti.items()}})
        degrees = range(0, 4)
        export.write_csv(self.out / 'tables' / 'sweep.csv', ['lambda', 'regular'] + [f"b{k}" for k in degrees],
                         [[r['lambda'], int(r['regular'])]
                          + [(r['betti'] or {}).get(str(k), 0) if r['regular'] else np.nan for k in degrees]
                          for r in rows])
        identical = all(b == bettis[0] for b in bettis)
        matches = bool(bettis) and all(bettis[0].get(k, 0) == expected.get(k, 0)
                                       for k in set(bettis[0]) | set(expected))
        self.report['sweep'] = {'rows': rows, 'level_set': topology.to_json(), 'identical': identical,
                                'matches_level_set': matches}
        self.checks['lambda_invariance'] = identical and matches
        self.lines.append(f"sweep over {len(lambdas)} lambdas: identical={identical}, "
                          f"matches level set ({topology.count} components)={matches}")
        return rows

    def large_lambda(self):
        lam = max(self.config.lambdas)
        restricted, geometry = self.restricted()
        bijection = canonical_bijection(self.crit(), geometry)
        comparison = compare_shifted(self.complex_lambda(lam), restricted, bijection, shift=1)
        self.report['large_lambda'] = {'lambda': lam, 'geometry': geometry.to_json(),
                                       'bijection': bijection, 'comparison': comparison.to_json()}
        self.checks['large_lambda'] = comparison.equal
        self.lines.append(f"large lambda ({lam:g}) vs restricted complex: {_verdict(comparison.equal)}")
        return comparison

    def fastslow(self):
        catalog = self.catalog()
        zero = self.complex_zero()
        lam = min(self.config.lambdas)
        comparison = compare_shifted(self.complex_lambda(lam), zero)
        self.report['catalog'] = catalog.to_json()
        self.report['complex_zero'] = zero.to_json()
        self.report['fast_slow'] = {f"{p}->{q}": [s.to_json() for s in seqs]
                                    for (p, q), seqs in sorted(zero.witnesses.items())}
        self.report['small_lambda'] = {'lambda': lam, 'comparison': comparison.to_json()}
        structure_ok = all(s.parity_ok() for seqs in zero.witnesses.values() for s in seqs)
        self.checks['structure'] = structure_ok
        self.checks['small_lambda'] = comparison.equal
        self.lines.append(f"fast-slow complex vs lambda={lam:g}: {_verdict(comparison.equal)}; "
                          f"structure rules {_verdict(structure_ok)}")
        return zero, comparison

    def convergence(self):
        zero = self.complex_zero()
        problem = self.problem()
        lambdas = list(self.config.convergence_lambdas)
        reports, ok = [], True
        for (p, q), seqs in sorted(zero.witnesses.items()):
            if not zero.coefficient(p, q):
                continue
            witnesses = {}
            for lam in lambdas:
                found = self.complex_lambda(lam).witnesses.get((p, q), [])
                witnesses[lam] = [c.witness for c in found]
            for i, seq in enumerate(seqs):
                rep = check_convergence(problem, seq, lambdas, witnesses, self.crit(), self.workers)
                reports.append(rep.to_json())
                ok = ok and rep.decreasing and rep.final_ok
                export.write_csv(self.out / 'tables' / f"convergence_{p}_{q}_{i}.csv", ['lambda', 'distance'],
                                 [[r['lambda'], r['distance'] if r['distance'] is not None else np.nan]
                                  for r in rep.rows])
        self.report['convergence'] = reports
        self.checks['convergence'] = ok
        self.lines.append(f"convergence over lambda {lambdas}: {_verdict(ok)}")
        return reports

    def foldtest(self):
        result = fold_scaling(self.config.fold_epsilons, self.config.fold_delta)
        export.write_csv(self.out / 'tables' / 'foldtest.csv', ['epsilon', 'rho'], result.csv_rows())
        ok = FOLD_SLOPE_BAND[0] <= result.slope <= FOLD_SLOPE_BAND[1]
        self.report['foldtest'] = result.to_json()
        self.checks['fold_scaling'] = ok
        self.lines.append(f"fold scaling slope {result.slope:.4f}: {_verdict(ok)}")
        return result

    # execution

    @property
    def passed(self):
        return all(self.checks.values())

    def finish(self):
        self.report['checks'] = {k: _verdict(v) for k, v in sorted(self.checks.items())}
        self.report['verdict'] = _verdict(self.passed)
        export.write_json(self.out / 'report.json', self.report)
        text = '\n'.join(self.lines + [f"verdict: {self.report['verdict'].upper()}"]) + '\n'
        (self.out / 'report.txt').write_text(text)
        return text

    def _fail(self, run, message, exit_code):
        logger.error(f"Run {run.run_id} failed: {message}")
        run.status = 'failed'
        run.error_message = message
        run.exit_code = exit_code
        run.finished_at = timezone.now()
        run.save()

    def execute(self, stages):
        """Run report sections in order, recording the run.

        A stage is a method name or a (name, *args) tuple.
        """
        run = ExperimentRun.objects.create(
            run_id=uuid.uuid4().hex, command=self.command, config_digest=self.digest,
            output_dir=str(self.out),
        )
        logger.info(f"Run {run.run_id}: {self.command} -> {self.out}")
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            for stage in stages:
                name, *args = (stage,) if isinstance(stage, str) else stage
                getattr(self, name)(*args)
            text = self.finish()
        except WorkbenchError as e:
            self._fail(run, str(e), e.exit_code)
            raise
        except Exception as e:
            logger.exception(f"Run {run.run_id} crashed")
            self._fail(run, f"{type(e).__name__}: {e}", 1)
            raise
        run.status = 'complete'
        run.verdict = self.report['verdict']
        run.report = export.round_floats(self.report)
        run.finished_at = timezone.now()
        run.save()
        return text
