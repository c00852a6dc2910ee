"""
Print and scan every template through one printer profile
Usage: python manage.py printsim --printer P55
"""
from experiments.management.base import StageCommand
from experiments.stages import run_printsim


class Command(StageCommand):
    help = 'Simulate print-and-scan of all templates on a printer profile'
    stage = 'printsim'

    def add_stage_arguments(self, parser):
        parser.add_argument('--printer', type=str, action='append',
                            help='Printer tag (repeatable, default: every configured printer)')

    def run_stage(self, cfg, layout, force, jobs, **options):
        done = None
        for tag in options['printer'] or cfg.channel.tags:
            count = run_printsim(cfg, layout, tag, force=force, jobs=jobs)
            if count is not None:
                self.stdout.write(f'{tag}: {count} codes scanned')
                done = count
        return done
