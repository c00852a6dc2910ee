"""
Shared plumbing of the pipeline commands: global flags, config loading and
conversion of workbench errors into CommandError.
"""
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from cdpbench.exceptions import CDPError, StageError
from experiments.models import load_config
from experiments.stages import Layout


class StageCommand(BaseCommand):
    stage = None

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, default=None,
                            help='Experiment config JSON (default: CDP_CONFIG)')
        parser.add_argument('--out', type=str, default=None, help='Output directory')
        parser.add_argument('--seed', type=int, default=None, help='Override the base seed')
        parser.add_argument('--jobs', type=int, default=None, help='Parallel workers for per-code work')
        parser.add_argument('--force', action='store_true', help='Rerun even if the stage is up to date')
        self.add_stage_arguments(parser)

    def add_stage_arguments(self, parser):
        pass

    def run_stage(self, cfg, layout, force, jobs, **options):
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            cfg = load_config(options['config'] or settings.CDP_CONFIG)
            cfg = cfg.with_overrides(seed=options['seed'],
                                     output_dir=options['out'] or settings.CDP_OUTPUT_DIR or None)
            layout = Layout(cfg.output_dir)
            jobs = options['jobs'] or settings.CDP_JOBS
            stage_options = {k: v for k, v in options.items() if k not in ('force', 'jobs')}
            result = self.run_stage(cfg, layout, options['force'], jobs, **stage_options)
        except StageError as e:
            raise CommandError(f'{self.stage} failed, missing stage {e.stage}: {e}')
        except CDPError as e:
            raise CommandError(f'{self.stage} failed: {e}')

        if result is None:
            self.stdout.write(self.style.WARNING(f'{self.stage}: up to date (use --force to rerun)'))
        else:
            self.stdout.write(self.style.SUCCESS(f'{self.stage}: done, outputs in {layout.root}'))
