"""
End-to-end execution of one training run: data, local training, fusion, evaluation, checkpoint and report.

Used inline by the ``train`` command and from the Celery worker by `training.tasks.run_training`.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from django.utils import timezone

from datasets.dataset import dataset_for, load_dataset
from datasets.evaluation import evaluate, extract_logits
from datasets.loader import train_loader
from engine.tensor import ActivationCounter

from .checkpoint import CHECKPOINT_NAME, save_checkpoint
from .config import arch_hash, save_config
from .fusion import train_fusion
from .memmodel import estimate_peak, measure_peak
from .models import LayerEpochMetric, TrainingRun
from .trainer import MetricsWriter, build_state, fit
from .utils import build_report, write_report


logger = logging.getLogger(__name__)

CONFIG_NAME = 'config.yaml'
METRICS_NAME = 'metrics.csv'
CURVE_NAME = 'curve.csv'
FUSION_REPORT_NAME = 'fusion_report.csv'


@dataclass
class RunResult:
    out_dir: Path
    state: object
    fusion: object
    evaluation: object
    train_evaluation: object
    report: dict


def load_splits(arch, plan, data=None):
    """The run's splits: the ``data`` path when given, the plan's `DataSpec` otherwise."""

    if data:
        return load_dataset(data, num_classes=arch.num_classes, mean=plan.data.mean, std=plan.data.std)
    return dataset_for(arch, plan.data, data_root=settings.FORWARDLAB_DATA_ROOT)


def write_curve(evaluation, path):
    with Path(path).open('w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=['layer', 'top1'])
        writer.writeheader()
        for layer, acc in zip(evaluation.layers, evaluation.per_layer_top1):
            writer.writerow({'layer': layer, 'top1': f"{acc:.4f}"})
    return path


def write_fusion_report(evaluation, path):
    with Path(path).open('w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=['layer', 'w_l', 'top1', 'fused_top1'])
        writer.writeheader()
        writer.writerows(evaluation.as_rows())
    return path


def fuse_and_evaluate(state, splits, plan):
    """
    Train the fusion head on cached train-split logits, then evaluate both splits.

    Returns:
        tuple: ``(fusion head, test evaluation, train evaluation)``.
    """

    network = state.network
    train_stack = extract_logits(network, splits.train)
    fusion = train_fusion(train_stack, splits.train.labels, epochs=plan.fusion.epochs, lr=plan.fusion.lr)
    train_evaluation = evaluate(network, splits.train, fusion=fusion, logit_stack=train_stack)
    selection = train_evaluation.per_layer_top1 if plan.fusion.selection_split == 'train' else None
    evaluation = evaluate(network, splits.test, fusion=fusion, selection_top1=selection)
    return fusion, evaluation, train_evaluation


def _record_epoch(run, rows, split=LayerEpochMetric.TRAIN):
    for row in rows:
        LayerEpochMetric.objects.update_or_create(
            run=run, epoch=row['epoch'], layer=row['layer'], split=split,
            defaults={'loss': row.get('loss'), 'top1': row['top1']},
        )


def execute_run(arch, plan, out_dir, run=None, measure_mem=None, data=None):
    """
    Train, fuse, evaluate and report one configuration.

    Args:
        arch (ArchSpec): Architecture.
        plan (TrainPlan): Training plan.
        out_dir (str | Path): Run directory for config, metrics, checkpoint and reports.
        run (TrainingRun | None): Bookkeeping row to keep in sync.
        measure_mem (bool | None): Enable allocation counters; ``FORWARDLAB_ENGINE['MEASURE_MEMORY']`` by default.
        data (str | None): Dataset path overriding the plan's data section.

    Returns:
        RunResult
    """

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if measure_mem is None:
        measure_mem = settings.FORWARDLAB_ENGINE['MEASURE_MEMORY']
    if run is not None:
        TrainingRun.objects.filter(pk=run.pk).update(
            status=TrainingRun.RUNNING, out_dir=str(out_dir), config_hash=arch_hash(arch),
            execution=plan.execution, hgb_m=plan.hgb_m, error='',
        )

    try:
        save_config(arch, plan, out_dir / CONFIG_NAME)
        splits = load_splits(arch, plan, data)
        state = build_state(arch, plan, dump_dir=out_dir, counter=ActivationCounter(enabled=measure_mem))
        loader = train_loader(splits.train, plan, state.rngs, dtype=state.network.dtype)
        logger.info("Run %s: %s layers, m=%s, %s execution, %s epochs into %s",
                    arch.name, arch.num_layers, plan.hgb_m, plan.execution, plan.epochs, out_dir)

        def on_epoch_end(state, rows):
            save_checkpoint(out_dir / CHECKPOINT_NAME, state)
            if run is not None:
                _record_epoch(run, rows)

        fit(state, loader, on_epoch_end=on_epoch_end, writer=MetricsWriter(out_dir / METRICS_NAME))

        fusion, evaluation, train_evaluation = fuse_and_evaluate(state, splits, plan)
        save_checkpoint(out_dir / CHECKPOINT_NAME, state, fusion=fusion)
        write_curve(evaluation, out_dir / CURVE_NAME)
        write_fusion_report(evaluation, out_dir / FUSION_REPORT_NAME)

        estimate = estimate_peak(arch, plan)
        measured = measure_peak(state) if measure_mem else None
        if measured is not None:
            logger.info("Peak memory: measured %s bytes, estimated %s bytes", measured, estimate.peak_bytes)
        report = build_report(arch.name, evaluation, train_evaluation, estimate, measured, epochs=state.epoch)
        write_report(report, out_dir)
    except Exception as exc:
        if run is not None:
            TrainingRun.objects.filter(pk=run.pk).update(
                status=TrainingRun.FAILED, error=str(exc), finished=timezone.now())
        logger.error("Run %s failed: %s", arch.name, exc)
        raise

    if run is not None:
        final_epoch = max(state.epoch - 1, 0)
        _record_epoch(run, [
            {'epoch': final_epoch, 'layer': layer, 'loss': None, 'top1': acc}
            for layer, acc in zip(evaluation.layers, evaluation.per_layer_top1)
        ], split=LayerEpochMetric.TEST)
        TrainingRun.objects.filter(pk=run.pk).update(
            status=TrainingRun.FINISHED, best_layer=evaluation.best_layer, best_top1=evaluation.best_top1,
            fused_top1=evaluation.fused_top1, measured_peak_bytes=measured,
            estimated_peak_bytes=estimate.peak_bytes, finished=timezone.now(),
        )
    logger.info("Run %s finished: best layer %s (%.2f%%), fused %.2f%%", arch.name, evaluation.best_layer,
                evaluation.best_top1, evaluation.fused_top1)
    return RunResult(out_dir, state, fusion, evaluation, train_evaluation, report)
