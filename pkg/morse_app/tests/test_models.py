from django.db import IntegrityError
from django.test import TestCase
from morse_app.models import ExperimentRun

class ExperimentRunModelTest(TestCase):
    def setUp(self):
        self.run = ExperimentRun.objects.create(
            run_id='run_123',
            command='sweep',
            config_digest='a' * 64,
            output_dir='/tmp/runs'
        )

    def test_run_creation(self):
        """Test ExperimentRun model creation"""
        self.assertEqual(self.run.run_id, 'run_123')
        self.assertEqual(self.run.command, 'sweep')
        self.assertEqual(self.run.config_digest, 'a' * 64)
        self.assertEqual(self.run.output_dir, '/tmp/runs')

    def test_run_str_representation(self):
        """Test string representation of ExperimentRun"""
        self.assertEqual(str(self.run), "sweep run run_123 - pending")

    def test_run_default_values(self):
        """Test ExperimentRun default values"""
        self.assertEqual(self.run.status, 'pending')
        self.assertEqual(self.run.verdict, '')
        self.assertEqual(self.run.exit_code, 0)
        self.assertIsNone(self.run.report)
        self.assertIsNone(self.run.error_message)
        self.assertIsNone(self.run.finished_at)

    def test_run_status_choices(self):
        """Test ExperimentRun status choices"""
        for status in ['pending', 'complete', 'failed']:
            self.run.status = status
            self.run.save()
            self.run.refresh_from_db()
            self.assertEqual(self.run.status, status)

    def test_report_json_round_trip(self):
        """Test the stored report survives a reload"""
        self.run.report = {'verdict': 'pass', 'checks': {'energy': 'pass'}}
        self.run.save()
        self.run.refresh_from_db()
        self.assertEqual(self.run.report['checks']['energy'], 'pass')

    def test_run_id_unique(self):
        """Test run ids are unique"""
        with self.assertRaises(IntegrityError):
            ExperimentRun.objects.create(run_id='run_123', command='crit', config_digest='b' * 64)
