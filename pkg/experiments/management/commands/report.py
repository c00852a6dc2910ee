from experiments.management.base import StageCommand
from experiments.stages import run_report


class Command(StageCommand):
    help = 'Emit the report bundle: tables, SVG figures and a reproduction manifest'
    stage = 'report'

    def run_stage(self, cfg, layout, force, jobs, **options):
        return run_report(cfg, layout, force=force, jobs=jobs)
