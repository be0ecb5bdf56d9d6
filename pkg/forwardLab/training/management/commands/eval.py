"""
``manage.py eval``: evaluate a checkpoint on a dataset split.
"""

import json

from django.core.management.base import BaseCommand, CommandError

from datasets.evaluation import evaluate
from engine.exceptions import ForwardLabError
from training.checkpoint import open_checkpoint
from training.runner import load_splits


class Command(BaseCommand):
    help = "Per-layer top-1 (Best Pred) and fused top-1 (Fusion Pred) of a checkpoint."

    def add_arguments(self, parser):
        parser.add_argument('--ckpt', required=True, help="Checkpoint file.")
        parser.add_argument('--data', help="Dataset path; the checkpoint's data section by default.")
        parser.add_argument('--split', choices=('train', 'test'), default='test')
        parser.add_argument('--json', action='store_true', help="Print the table as JSON.")

    def handle(self, *args, **options):
        try:
            state, fusion = open_checkpoint(options['ckpt'])
            splits = load_splits(state.arch, state.plan, options['data'])
            selection = None
            if fusion is not None and state.plan.fusion.selection_split == 'train' and options['split'] == 'test':
                selection = evaluate(state.network, splits.train).per_layer_top1
            result = evaluate(state.network, splits[options['split']], fusion=fusion, selection_top1=selection)
        except ForwardLabError as exc:
            raise CommandError(str(exc)) from exc

        if options['json']:
            self.stdout.write(json.dumps({
                'layers': result.layers,
                'top1': result.per_layer_top1,
                'best_layer': result.best_layer,
                'best_top1': result.best_top1,
                'fused_top1': result.fused_top1,
            }, indent=2))
            return
        for layer, acc in zip(result.layers, result.per_layer_top1):
            self.stdout.write(f"layer {layer:>3}  top1={acc:.2f}%")
        fused = f"{result.fused_top1:.2f}%" if result.fused_top1 is not None else "n/a (no fusion weights)"
        self.stdout.write(self.style.SUCCESS(
            f"Best Pred layer {result.best_layer} {result.best_top1:.2f}%, Fusion Pred {fused}"))
