from django.db import models


class ExperimentRun(models.Model):
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('complete', 'Complete'),
        ('failed', 'Failed'),
    ]
    VERDICT_CHOICES = [
        ('pass', 'Pass'),
        ('fail', 'Fail'),
        ('', 'None'),
    ]

    run_id = models.CharField(max_length=100, unique=True)
    command = models.CharField(max_length=50)
    config_digest = models.CharField(max_length=64)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='pending')
    verdict = models.CharField(max_length=10, choices=VERDICT_CHOICES, blank=True, default='')
    output_dir = models.CharField(max_length=500, blank=True, default='')
    report = models.JSONField(blank=True, null=True)
    error_message = models.TextField(blank=True, null=True)
    exit_code = models.IntegerField(default=0)
    finished_at = models.DateTimeField(blank=True, null=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        db_table = 'experiment_runs'
        indexes = [
            models.Index(fields=['run_id'], name='experiment_run_id_idx'),
            models.Index(fields=['command'], name='experiment_command_idx'),
            models.Index(fields=['status'], name='experiment_status_idx'),
            models.Index(fields=['created_at'], name='experiment_created_at_idx'),
        ]

    def __str__(self):
        return f"{self.command} run {self.run_id} - {self.status}"
