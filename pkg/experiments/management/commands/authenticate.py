from experiments.management.base import StageCommand
from experiments.stages import run_authenticate


class Command(StageCommand):
    help = 'Score originals and fakes with HAMMING, SSIM, JACCARD and CORR'
    stage = 'authenticate'

    def run_stage(self, cfg, layout, force, jobs, **options):
        return run_authenticate(cfg, layout, force=force, jobs=jobs)
