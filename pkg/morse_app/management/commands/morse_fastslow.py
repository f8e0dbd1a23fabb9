from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = 'Fast-slow catalog, the complex at lambda = 0 and its comparison with the smallest lambda'
    pipeline_name = 'fastslow'
    stages = ('crit_table', 'trace_table', 'fastslow')
