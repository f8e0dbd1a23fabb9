from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = 'Trace the slow manifold and export branches, folds and markers'
    pipeline_name = 'trace'
    stages = ('crit_table', 'trace_table')
