from django.test import TestCase
from django.urls import reverse
from django.utils import timezone
from morse_app.models import ExperimentRun

class HealthCheckViewTest(TestCase):
    def test_health_check(self):
        """Test health check endpoint"""
        response = self.client.get(reverse('health-check'))

        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertTrue(data['success'])
        self.assertEqual(data['data']['status'], 'healthy')
        self.assertEqual(data['data']['service'], 'morse_workbench')

class RunStatsViewTest(TestCase):
    def setUp(self):
        # One run per outcome
        ExperimentRun.objects.create(run_id='r1', command='sweep', config_digest='a', status='complete', verdict='pass')
        ExperimentRun.objects.create(run_id='r2', command='sweep', config_digest='a', status='complete', verdict='fail')
        ExperimentRun.objects.create(run_id='r3', command='count', config_digest='b', status='failed', exit_code=3)
        ExperimentRun.objects.create(run_id='r4', command='report', config_digest='c')

    def test_run_stats(self):
        """Test run statistics endpoint"""
        response = self.client.get(reverse('run-stats'))

        self.assertEqual(response.status_code, 200)
        data = response.json()

        self.assertTrue(data['success'])
        self.assertEqual(data['data']['total_runs'], 4)
        self.assertEqual(data['data']['complete_runs'], 2)
        self.assertEqual(data['data']['failed_runs'], 1)
        self.assertEqual(data['data']['pending_runs'], 1)
        self.assertEqual(data['data']['passed_runs'], 1)
        self.assertEqual(data['data']['pass_rate'], 50.0)

    def test_run_stats_empty(self):
        """Test statistics with no complete runs"""
        ExperimentRun.objects.all().delete()
        response = self.client.get(reverse('run-stats'))

        self.assertEqual(response.json()['data']['pass_rate'], 0)

class RunListViewTest(TestCase):
    def setUp(self):
        for i in range(5):
            ExperimentRun.objects.create(
                run_id=f'run{i}', command='sweep' if i % 2 else 'crit', config_digest='a' * 64,
                status='complete'
            )

    def test_run_list(self):
        """Test run listing"""
        response = self.client.get(reverse('run-list'))

        self.assertEqual(response.status_code, 200)
        data = response.json()

        self.assertTrue(data['success'])
        self.assertEqual(len(data['data']), 5)

    def test_run_list_filter_by_command(self):
        """Test run listing filtered by command"""
        response = self.client.get(reverse('run-list') + '?command=sweep')

        data = response.json()
        self.assertEqual(len(data['data']), 2)
        self.assertTrue(all(run['command'] == 'sweep' for run in data['data']))

    def test_run_list_filter_by_status(self):
        """Test run listing filtered by status"""
        response = self.client.get(reverse('run-list') + '?status=failed')

        self.assertEqual(len(response.json()['data']), 0)

    def test_run_list_limit(self):
        """Test run listing with limit"""
        response = self.client.get(reverse('run-list') + '?limit=2')

        self.assertEqual(len(response.json()['data']), 2)

    def test_run_list_invalid_limit(self):
        """Test run listing with a non-numeric limit"""
        response = self.client.get(reverse('run-list') + '?limit=many')

        self.assertEqual(response.status_code, 400)
        self.assertFalse(response.json()['success'])

class RunDetailViewTest(TestCase):
    def setUp(self):
        self.run = ExperimentRun.objects.create(
            run_id='abc', command='report', config_digest='a' * 64, status='complete', verdict='pass',
            report={'verdict': 'pass'}, output_dir='/tmp/runs/abc', finished_at=timezone.now()
        )

    def test_run_detail(self):
        """Test run detail includes the report"""
        response = self.client.get(reverse('run-detail', args=['abc']))

        self.assertEqual(response.status_code, 200)
        data = response.json()['data']
        self.assertEqual(data['run_id'], 'abc')
        self.assertEqual(data['report'], {'verdict': 'pass'})
        self.assertEqual(data['output_dir'], '/tmp/runs/abc')
        self.assertIsNotNone(data['finished_at'])

    def test_run_detail_not_found(self):
        """Test unknown run ids return 404"""
        response = self.client.get(reverse('run-detail', args=['missing']))

        self.assertEqual(response.status_code, 404)
        self.assertFalse(response.json()['success'])
