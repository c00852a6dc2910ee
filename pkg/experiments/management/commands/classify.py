from experiments.management.base import StageCommand
from experiments.stages import run_classify


class Command(StageCommand):
    help = 'Evaluate one-class and two-class SVMs and write the P_miss / P_fa tables'
    stage = 'classify'

    def run_stage(self, cfg, layout, force, jobs, **options):
        return run_classify(cfg, layout, force=force, jobs=jobs)
