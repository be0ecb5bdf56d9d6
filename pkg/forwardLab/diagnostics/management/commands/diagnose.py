"""
``manage.py diagnose``: Decline Area, Tail Retention, Shallow/Deep Gain and N_eff of per-layer curves.
"""

import json

from django.core.management.base import BaseCommand, CommandError

from diagnostics.report import diagnose, read_curve
from engine.exceptions import ForwardLabError


def _weights(value):
    if value is None:
        return None
    try:
        return [float(item) for item in value.split(',')]
    except ValueError:
        raise CommandError(f"expected comma-separated weights, got {value!r}") from None


class Command(BaseCommand):
    help = "JSON diagnostics report for one curve, or for an A/B pair of curves."

    def add_arguments(self, parser):
        parser.add_argument('--curves', nargs='+', required=True, metavar='CSV',
                            help="One or two curve files (layer,top1 tables or metrics.csv files).")
        parser.add_argument('--weights', nargs='+', metavar='W1,W2,...',
                            help="Fusion weights per curve, comma-separated.")
        parser.add_argument('--split', default='test', help="Split to read from metrics files.")

    def handle(self, *args, **options):
        weights = [_weights(value) for value in options['weights']] if options['weights'] else None
        try:
            curves = [read_curve(path, split=options['split']) for path in options['curves']]
            report = diagnose(curves, weights)
        except ForwardLabError as exc:
            raise CommandError(str(exc)) from exc
        self.stdout.write(json.dumps(report, indent=2))
