"""
``manage.py fuse``: train the fusion weights of a checkpoint on its frozen per-layer logits.
"""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from engine.exceptions import ForwardLabError
from training.checkpoint import open_checkpoint, save_checkpoint
from training.runner import FUSION_REPORT_NAME, fuse_and_evaluate, load_splits, write_fusion_report


class Command(BaseCommand):
    help = "Fit Logistic Fusion weights for a trained checkpoint and report per-layer and fused accuracy."

    def add_arguments(self, parser):
        parser.add_argument('--ckpt', required=True, help="Checkpoint file.")
        parser.add_argument('--data', help="Dataset path; the checkpoint's data section by default.")
        parser.add_argument('--out', help="Report path; fusion_report.csv next to the checkpoint by default.")

    def handle(self, *args, **options):
        ckpt = Path(options['ckpt'])
        try:
            state, _ = open_checkpoint(ckpt)
            splits = load_splits(state.arch, state.plan, options['data'])
            fusion, evaluation, _ = fuse_and_evaluate(state, splits, state.plan)
            save_checkpoint(ckpt, state, fusion=fusion)
        except ForwardLabError as exc:
            raise CommandError(str(exc)) from exc

        report = Path(options['out'] or ckpt.parent / FUSION_REPORT_NAME)
        write_fusion_report(evaluation, report)
        for row in evaluation.as_rows():
            self.stdout.write(f"layer {row['layer']:>3}  w={row['w_l']:.4f}  top1={row['top1']:.2f}%")
        self.stdout.write(self.style.SUCCESS(
            f"Fusion Pred {evaluation.fused_top1:.2f}% (Best Pred layer {evaluation.best_layer} "
            f"{evaluation.best_top1:.2f}%); report written to {report}"
        ))
