from django.core.management.base import CommandError

from morse_app.exceptions import AssumptionFailure

from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = 'Check the numerically verifiable genericity assumptions (exit 2 on failure)'
    pipeline_name = 'check'
    stages = ('check_assumptions',)

    def after(self, pipeline):
        if not pipeline.checks.get('assumptions', False):
            self.stderr.write(self.style.ERROR('Assumption check failed'))
            raise CommandError('Assumption check failed', returncode=AssumptionFailure.exit_code)
