"""
``manage.py train``: run a configuration inline, or queue it for the Celery worker with ``--async``.
"""

from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from engine.exceptions import ForwardLabError
from training.config import arch_hash, load_config, load_preset
from training.models import TrainingRun
from training.runner import execute_run
from training.tasks import run_training


class Command(BaseCommand):
    help = "Train a local-learning network from a configuration file or preset."

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--config', help="YAML configuration file.")
        source.add_argument('--preset', help="Name of a bundled preset.")
        parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                            help="Override a configuration value, e.g. train.hgb_m=4 (repeatable).")
        parser.add_argument('--out', help="Run directory; defaults to FORWARDLAB_RUN_ROOT/<name>-<timestamp>.")
        parser.add_argument('--data', help="Dataset path (IDX directory or manifest) replacing the data section.")
        parser.add_argument('--measure-mem', action='store_true', help="Record measured peak memory.")
        parser.add_argument('--async', dest='run_async', action='store_true',
                            help="Queue the run for the Celery worker instead of running it here.")

    def handle(self, *args, **options):
        overrides = options['overrides']
        try:
            if options['config']:
                arch, plan = load_config(options['config'], overrides)
            else:
                arch, plan = load_preset(options['preset'], overrides)
        except ForwardLabError as exc:
            raise CommandError(str(exc)) from exc

        stamp = timezone.now().strftime('%Y%m%d-%H%M%S')
        out_dir = Path(options['out'] or Path(settings.FORWARDLAB_RUN_ROOT) / f"{arch.name}-{stamp}")
        run = TrainingRun.objects.create(
            name=arch.name,
            preset=options['preset'] or '',
            config_path=str(Path(options['config']).resolve()) if options['config'] else '',
            overrides=overrides,
            config_hash=arch_hash(arch),
            out_dir=str(out_dir),
            execution=plan.execution,
            hgb_m=plan.hgb_m,
        )

        if options['run_async']:
            run_training.delay(run.pk, measure_mem=options['measure_mem'] or None, data=options['data'])
            self.stdout.write(self.style.SUCCESS(f"Queued run {run.pk} ({arch.name}) into {out_dir}"))
            return

        try:
            result = execute_run(arch, plan, out_dir, run=run, measure_mem=options['measure_mem'] or None,
                                 data=options['data'])
        except ForwardLabError as exc:
            raise CommandError(str(exc)) from exc

        evaluation = result.evaluation
        self.stdout.write(self.style.SUCCESS(
            f"Run {run.pk} finished in {out_dir}: Best Pred layer {evaluation.best_layer} "
            f"{evaluation.best_top1:.2f}%, Fusion Pred {evaluation.fused_top1:.2f}%"
        ))
