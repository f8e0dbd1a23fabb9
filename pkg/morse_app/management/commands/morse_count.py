from morse_app.exceptions import ConfigError

from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = 'Boundary matrix of the lambda-complex with orbit witnesses'
    pipeline_name = 'count'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--lambda', dest='lam', type=float, default=1.0, help='Metric scale lambda > 0')
        parser.add_argument('--refine', action='store_true',
                            help='Repeat the count with finer radius, angles and tolerances')

    def handle(self, *args, **options):
        self.lam = options['lam']
        self.refine = options.get('refine', False)
        super().handle(*args, **options)

    def run_pipeline(self, pipeline):
        if self.lam <= 0:
            raise ConfigError(f"--lambda must be positive, got {self.lam}")
        stages = ['crit_table', ('count', self.lam)]
        if self.refine:
            stages.append(('refine', self.lam))
        return pipeline.execute(stages)

    def after(self, pipeline):
        if self.refine and not pipeline.checks.get('refinement', True):
            self.stderr.write(self.style.WARNING('Counts moved under refinement'))
