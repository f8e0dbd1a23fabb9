from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_id', models.CharField(max_length=100, unique=True)),
                ('command', models.CharField(max_length=50)),
                ('config_digest', models.CharField(max_length=64)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('complete', 'Complete'), ('failed', 'Failed')], default='pending', max_length=10)),
                ('verdict', models.CharField(blank=True, choices=[('pass', 'Pass'), ('fail', 'Fail'), ('', 'None')], default='', max_length=10)),
                ('output_dir', models.CharField(blank=True, default='', max_length=500)),
                ('report', models.JSONField(blank=True, null=True)),
                ('error_message', models.TextField(blank=True, null=True)),
                ('exit_code', models.IntegerField(default=0)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'db_table': 'experiment_runs',
                'indexes': [models.Index(fields=['run_id'], name='experiment_run_id_idx'), models.Index(fields=['command'], name='experiment_command_idx'), models.Index(fields=['status'], name='experiment_status_idx'), models.Index(fields=['created_at'], name='experiment_created_at_idx')],
            },
        ),
    ]
