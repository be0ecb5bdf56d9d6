"""
``manage.py memplan``: analytic peak-memory estimates as CSV.
"""

from django.core.management.base import BaseCommand, CommandError

from engine.exceptions import ForwardLabError
from training.config import load_config, load_preset
from training.memmodel import estimates_csv, sweep


def _int_list(value):
    try:
        return [int(item) for item in value.split(',') if item.strip()]
    except ValueError:
        raise CommandError(f"expected a comma-separated list of integers, got {value!r}") from None


class Command(BaseCommand):
    help = "Estimate the peak memory of one training step for one or several block sizes m."

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--config', help="YAML configuration file.")
        source.add_argument('--preset', help="Name of a bundled preset.")
        parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE')
        parser.add_argument('--batch', type=int, help="Batch size; the plan's by default.")
        parser.add_argument('--sweep-m', help="Comma-separated block sizes, e.g. 1,2,4,8,16.")
        parser.add_argument('--execution', choices=('greedy', 'interleaved', 'both'),
                            help="Schedule(s) to estimate; the plan's by default.")

    def handle(self, *args, **options):
        try:
            if options['config']:
                arch, plan = load_config(options['config'], options['overrides'])
            else:
                arch, plan = load_preset(options['preset'], options['overrides'])
        except ForwardLabError as exc:
            raise CommandError(str(exc)) from exc

        ms = _int_list(options['sweep_m']) if options['sweep_m'] else [plan.hgb_m]
        executions = None
        if options['execution'] == 'both':
            executions = ('greedy', 'interleaved')
        elif options['execution']:
            executions = (options['execution'],)
        estimates = sweep(arch, plan, ms, batch=options['batch'], executions=executions)
        if not estimates:
            raise CommandError(f"no valid block size in {ms} for {arch.num_layers} layers")
        self.stdout.write(estimates_csv(estimates), ending='')
