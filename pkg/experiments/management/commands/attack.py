"""
Train the template estimators and estimate the held-out codes
Usage: python manage.py attack --printer P55 --kind learned --mode deterministic
"""
from attack.models import KINDS, MODES
from experiments.management.base import StageCommand
from experiments.stages import run_attack


class Command(StageCommand):
    help = 'Run the template-estimation attack and write the P_error tables'
    stage = 'attack'

    def add_stage_arguments(self, parser):
        parser.add_argument('--printer', type=str, action='append', help='Printer tag (repeatable)')
        parser.add_argument('--kind', choices=KINDS, default=None, help='Estimator kind (default: all)')
        parser.add_argument('--mode', choices=MODES, default=None, help='Learned estimator mode')

    def run_stage(self, cfg, layout, force, jobs, **options):
        done = None
        for tag in options['printer'] or cfg.channel.tags:
            results = run_attack(cfg, layout, tag, kind=options['kind'], mode=options['mode'],
                                 force=force, jobs=jobs)
            for label, rows in results.items():
                if rows is None:
                    continue
                done = True
                summary = ', '.join(f'{d:.2f}: {mean:.2f}%' for d, _, mean, _ in rows)
                self.stdout.write(f'{label} on {tag}: {summary}')
        return done
