"""
Generate the template set and the dataset manifest
Usage: python manage.py generate --config experiments/configs/desk.json
"""
from experiments.management.base import StageCommand
from experiments.stages import run_generate


class Command(StageCommand):
    help = 'Generate random binary templates for every configured density'
    stage = 'generate'

    def run_stage(self, cfg, layout, force, jobs, **options):
        return run_generate(cfg, layout, force=force, jobs=jobs)
