from ._base import WorkbenchCommand, parse_lambdas


class Command(WorkbenchCommand):
    help = 'Betti numbers of the lambda-complex over a lambda list, with regularity flags'
    pipeline_name = 'sweep'
    stages = ('crit_table', 'sweep')

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--lambdas', help='Comma-separated lambda values')

    def build_config(self, options):
        config = super().build_config(options)
        if options.get('lambdas'):
            config = config.with_overrides(lambdas=parse_lambdas(options['lambdas']))
        return config
