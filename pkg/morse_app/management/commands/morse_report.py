from ._base import WorkbenchCommand, parse_lambdas


class Command(WorkbenchCommand):
    help = 'Full pipeline with a verdict on lambda-invariance and both adiabatic limits'
    pipeline_name = 'report'
    stages = (
        'check_assumptions', 'crit_table', 'trace_table', 'sweep', 'large_lambda',
        'fastslow', 'convergence', 'foldtest',
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--lambdas', help='Comma-separated lambda values')

    def build_config(self, options):
        config = super().build_config(options)
        if options.get('lambdas'):
            config = config.with_overrides(lambdas=parse_lambdas(options['lambdas']))
        return config
