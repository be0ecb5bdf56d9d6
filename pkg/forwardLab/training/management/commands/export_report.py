"""
``manage.py export_report``: write ``report.json`` and ``report.pdf`` for a run directory.
"""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from datasets.evaluation import evaluate
from engine.exceptions import ForwardLabError
from training.checkpoint import CHECKPOINT_NAME, open_checkpoint
from training.memmodel import estimate_peak
from training.runner import load_splits
from training.utils import REPORT_JSON, build_report, export_report, write_report


class Command(BaseCommand):
    help = "Write report.json (rebuilt from the checkpoint when missing) and report.pdf for a run."

    def add_arguments(self, parser):
        parser.add_argument('--run-dir', required=True, help="Directory of a finished run.")
        parser.add_argument('--data', help="Dataset path used when the report has to be rebuilt.")

    def rebuild(self, run_dir, data):
        state, fusion = open_checkpoint(run_dir / CHECKPOINT_NAME)
        splits = load_splits(state.arch, state.plan, data)
        train_evaluation = evaluate(state.network, splits.train, fusion=fusion)
        selection = train_evaluation.per_layer_top1 if state.plan.fusion.selection_split == 'train' else None
        evaluation = evaluate(state.network, splits.test, fusion=fusion, selection_top1=selection)
        report = build_report(state.arch.name, evaluation, train_evaluation, estimate_peak(state.arch, state.plan),
                              epochs=state.epoch)
        write_report(report, run_dir)

    def handle(self, *args, **options):
        run_dir = Path(options['run_dir'])
        try:
            if not (run_dir / REPORT_JSON).exists():
                self.stdout.write(f"No {REPORT_JSON} in {run_dir}, rebuilding it from the checkpoint")
                self.rebuild(run_dir, options['data'])
            json_path, pdf_path = export_report(run_dir)
        except ForwardLabError as exc:
            raise CommandError(str(exc)) from exc
        except (OSError, ValueError, KeyError) as exc:
            raise CommandError(f"cannot export report from {run_dir}: {exc}") from exc
        self.stdout.write(self.style.SUCCESS(f"Report: {json_path}, {pdf_path}"))
