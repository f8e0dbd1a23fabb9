from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = 'Compute Crit(F) with indices and slow-equation types'
    pipeline_name = 'crit'
    stages = ('crit_table',)
