"""
Re-print binarized estimates as fakes f^{A/B}
Usage: python manage.py fakes --estimated-on P55 --printed-on P76
"""
from experiments.management.base import StageCommand
from experiments.stages import run_fakes


class Command(StageCommand):
    help = 'Print estimated templates through a printer profile to produce fakes'
    stage = 'fakes'

    def add_stage_arguments(self, parser):
        parser.add_argument('--estimated-on', type=str, default=None,
                            help='Printer whose scans were attacked (default: all)')
        parser.add_argument('--printed-on', type=str, default=None,
                            help='Printer used for the fakes (default: all)')

    def run_stage(self, cfg, layout, force, jobs, **options):
        sources = [options['estimated_on']] if options['estimated_on'] else cfg.channel.tags
        targets = [options['printed_on']] if options['printed_on'] else cfg.channel.tags
        done = None
        for a in sources:
            for b in targets:
                count = run_fakes(cfg, layout, a, b, force=force, jobs=jobs)
                if count is not None:
                    self.stdout.write(f'f^{a}/{b}: {count} fakes')
                    done = count
        return done
