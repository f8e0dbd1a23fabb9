import logging

from django.core.management.base import BaseCommand, CommandError

from morse_app.config import RunConfig
from morse_app.exceptions import ConfigError, WorkbenchError
from morse_app.pipeline import Pipeline

logger = logging.getLogger(__name__)


def parse_lambdas(text):
    try:
        values = tuple(float(v) for v in text.split(',') if v.strip())
    except ValueError as e:
        raise ConfigError(f"--lambdas must be a comma-separated list of numbers: {e}") from e
    if not values:
        raise ConfigError("--lambdas is empty")
    return values


class WorkbenchCommand(BaseCommand):
    """Shared flags and error mapping for the workbench commands."""

    pipeline_name = None
    stages = ()

    def add_arguments(self, parser):
        parser.add_argument('--config', help='YAML experiment config (default: built-in problem)')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--workers', type=int, help='Worker processes for shooting and scans')
        parser.add_argument('--seed', type=int, help='Seed for perturbation utilities')
        parser.add_argument('--no-cache', action='store_true', help='Recompute every stage')

    def build_config(self, options):
        config = RunConfig.load(options.get('config'))
        return config.with_overrides(
            output=options.get('out'), workers=options.get('workers'), seed=options.get('seed'))

    def run_pipeline(self, pipeline):
        return pipeline.execute(self.stages)

    def after(self, pipeline):
        """Hook for commands whose exit code depends on a check."""

    def handle(self, *args, **options):
        try:
            config = self.build_config(options)
            pipeline = Pipeline(config, self.pipeline_name, use_cache=not options.get('no_cache'))
            self.stdout.write(self.style.SUCCESS(f"Running {self.pipeline_name} -> {pipeline.out}"))
            text = self.run_pipeline(pipeline)
        except WorkbenchError as e:
            logger.error(f"{self.pipeline_name} failed: {e}")
            self.stderr.write(self.style.ERROR(f"{type(e).__name__}: {e}"))
            raise CommandError(str(e), returncode=e.exit_code)
        self.stdout.write(text)
        self.after(pipeline)
