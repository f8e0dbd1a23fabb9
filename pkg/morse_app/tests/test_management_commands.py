import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import patch

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from morse_app.exceptions import NumericalError
from morse_app.models import ExperimentRun
from morse_app.pipeline import Pipeline


def fail_assumptions(pipeline):
    pipeline.checks['assumptions'] = False


@override_settings(MORSE_DEFAULT_CONFIG=None)
class WorkbenchCommandTest(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def test_foldtest_command(self):
        """Test the foldtest command writes its report and records the run"""
        out = StringIO()
        call_command('morse_foldtest', '--out', self.out, '--no-cache', stdout=out)

        self.assertIn('Running foldtest', out.getvalue())
        self.assertIn('verdict: PASS', out.getvalue())

        report = json.loads((Path(self.out) / 'report.json').read_text())
        self.assertEqual(report['command'], 'foldtest')
        self.assertEqual(report['checks'], {'fold_scaling': 'pass'})
        self.assertTrue((Path(self.out) / 'tables' / 'foldtest.csv').exists())

        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'complete')
        self.assertEqual(run.verdict, 'pass')
        self.assertEqual(run.output_dir, self.out)

    def test_missing_config(self):
        """Test a missing config file exits with 1"""
        with self.assertRaises(CommandError) as ctx:
            call_command('morse_foldtest', '--config', '/nonexistent/run.yaml', stdout=StringIO(), stderr=StringIO())

        self.assertEqual(ctx.exception.returncode, 1)
        self.assertEqual(ExperimentRun.objects.count(), 0)

    def test_count_rejects_non_positive_lambda(self):
        """Test --lambda must be positive"""
        err = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command('morse_count', '--lambda=-1', '--out', self.out, stdout=StringIO(), stderr=err)

        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn('ConfigError', err.getvalue())

    @patch.object(Pipeline, 'check_assumptions', autospec=True, side_effect=fail_assumptions)
    def test_check_failure_exits_with_2(self, mock_check):
        """Test a failed assumption gate exits with 2"""
        with self.assertRaises(CommandError) as ctx:
            call_command('morse_check', '--out', self.out, '--no-cache', stdout=StringIO(), stderr=StringIO())

        self.assertEqual(ctx.exception.returncode, 2)
        mock_check.assert_called_once()
        self.assertEqual(ExperimentRun.objects.get().verdict, 'fail')

    @patch('morse_app.pipeline.fold_scaling', side_effect=NumericalError('step size underflow'))
    def test_numerical_failure_exits_with_3(self, mock_scaling):
        """Test numerical failures exit with 3 and mark the run failed"""
        err = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command('morse_foldtest', '--out', self.out, '--no-cache', stdout=StringIO(), stderr=err)

        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('step size underflow', err.getvalue())

        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.exit_code, 3)
        self.assertEqual(run.error_message, 'step size underflow')

    @patch('morse_app.pipeline.fold_scaling', side_effect=ValueError('bad shape'))
    def test_unexpected_error_marks_run_failed(self, mock_scaling):
        """Test a non-workbench exception still records the failed run and propagates"""
        with self.assertRaises(ValueError):
            call_command('morse_foldtest', '--out', self.out, '--no-cache', stdout=StringIO(), stderr=StringIO())

        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.exit_code, 1)
        self.assertEqual(run.error_message, 'ValueError: bad shape')
        self.assertIsNotNone(run.finished_at)

    @patch.object(Pipeline, 'execute', autospec=True, return_value='verdict: PASS\n')
    def test_count_refine_adds_stage(self, mock_execute):
        """Test --refine appends the refinement stage after the count"""
        call_command('morse_count', '--lambda=2', '--refine', '--out', self.out, stdout=StringIO(),
                     stderr=StringIO())

        _, stages = mock_execute.call_args[0]
        self.assertEqual(stages, ['crit_table', ('count', 2.0), ('refine', 2.0)])
