"""
Run the whole lifecycle from one config
Usage: python manage.py run_all --config experiments/configs/desk.json --out out/desk
"""
from experiments.management.base import StageCommand
from experiments.stages import run_all


class Command(StageCommand):
    help = 'generate, printsim, attack, fakes, authenticate, classify and report in sequence'
    stage = 'run_all'

    def run_stage(self, cfg, layout, force, jobs, **options):
        def progress(name):
            self.stage = name
            self.stdout.write(f'-> {name}')

        path = run_all(cfg, layout, force=force, jobs=jobs, progress=progress)
        self.stage = 'run_all'
        return path
