from ._base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = 'Exit-offset scaling of the planar fold normal form'
    pipeline_name = 'foldtest'
    stages = ('foldtest',)
