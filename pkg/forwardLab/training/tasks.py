"""
Asynchronous execution of queued training runs.
"""

import logging
from pathlib import Path

from django.conf import settings

from forwardLab.celery import app

from .config import load_config, load_preset
from .models import TrainingRun
from .runner import execute_run


logger = logging.getLogger(__name__)


def run_config(run):
    """The ``(ArchSpec, TrainPlan)`` a run row points at, with its overrides applied."""

    overrides = list(run.overrides or [])
    if run.config_path:
        return load_config(run.config_path, overrides)
    return load_preset(run.preset, overrides)


def run_directory(run):
    return Path(run.out_dir) if run.out_dir else Path(settings.FORWARDLAB_RUN_ROOT) / f"run-{run.pk}"


@app.task(name="training.tasks.run_training")
def run_training(run_id, measure_mem=None, data=None):
    """
    Execute a queued `TrainingRun` in the worker.

    The run moves from ``queued`` to ``running`` and ends as ``finished`` or ``failed``; a failure is stored on
    the row and logged rather than re-raised.

    Returns:
        str: The final status.
    """

    try:
        run = TrainingRun.objects.get(pk=run_id)
    except TrainingRun.DoesNotExist:
        logger.error("Training run %s does not exist", run_id)
        return None

    logger.info("Start training run %s (%s)", run.pk, run.name)
    try:
        arch, plan = run_config(run)
        execute_run(arch, plan, run_directory(run), run=run, measure_mem=measure_mem, data=data)
    except Exception as exc:
        TrainingRun.objects.filter(pk=run.pk).exclude(status=TrainingRun.FAILED).update(
            status=TrainingRun.FAILED, error=str(exc))
        logger.error("Training run %s failed: %s", run.pk, exc)
        return TrainingRun.FAILED

    logger.info("Training run %s finished", run.pk)
    return TrainingRun.FINISHED
