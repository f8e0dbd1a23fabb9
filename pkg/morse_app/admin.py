from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('run_id', 'command', 'status', 'verdict', 'exit_code', 'created_at')
    list_filter = ('command', 'status', 'verdict')
    search_fields = ('run_id', 'config_digest')
    readonly_fields = ('report', 'created_at', 'updated_at', 'finished_at')
