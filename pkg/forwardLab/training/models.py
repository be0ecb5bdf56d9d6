"""
Database models recording training runs and their per-layer metrics.
"""

from django.db import models
from django.db.models import Max


class TrainingRun(models.Model):
    """Model representing one training run, from queueing to its final summary."""

    QUEUED = 'queued'
    RUNNING = 'running'
    FINISHED = 'finished'
    FAILED = 'failed'
    STATUS_CHOICES = [
        (QUEUED, 'Queued'),
        (RUNNING, 'Running'),
        (FINISHED, 'Finished'),
        (FAILED, 'Failed'),
    ]

    name = models.CharField(max_length=100)
    preset = models.CharField(max_length=50, blank=True)
    config_path = models.CharField(max_length=255, blank=True)
    overrides = models.JSONField(default=list, blank=True)
    config_hash = models.CharField(max_length=64, blank=True)
    out_dir = models.CharField(max_length=255, blank=True)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default=QUEUED)
    execution = models.CharField(max_length=20, default='greedy')
    hgb_m = models.PositiveIntegerField(default=1)
    epochs_done = models.PositiveIntegerField(default=0)
    best_layer = models.IntegerField(null=True, blank=True)
    best_top1 = models.FloatField(null=True, blank=True)
    fused_top1 = models.FloatField(null=True, blank=True)
    measured_peak_bytes = models.BigIntegerField(null=True, blank=True)
    estimated_peak_bytes = models.BigIntegerField(null=True, blank=True)
    error = models.TextField(blank=True)
    created = models.DateTimeField(auto_now_add=True)
    finished = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created']

    def __str__(self):
        return f"{self.name} ({self.status})"

    def latest_metrics(self):
        """Per-layer metrics of the latest epoch, test split when recorded, train split otherwise."""

        latest = self.metrics.aggregate(epoch=Max('epoch'))['epoch']
        if latest is None:
            return self.metrics.none()
        rows = self.metrics.filter(epoch=latest)
        test_rows = rows.filter(split=LayerEpochMetric.TEST)
        return (test_rows if test_rows.exists() else rows.filter(split=LayerEpochMetric.TRAIN)).order_by('layer')

    def update_summary(self):
        """Recompute epochs_done, best_layer and best_top1; ties go to the deeper layer."""

        rows = list(self.latest_metrics())
        if not rows:
            return
        best = max(rows, key=lambda row: (row.top1, row.layer))
        TrainingRun.objects.filter(pk=self.pk).update(
            epochs_done=rows[0].epoch + 1,
            best_layer=best.layer,
            best_top1=best.top1,
        )


class LayerEpochMetric(models.Model):
    """Model representing the loss and top-1 accuracy of one layer (or group exit) after one epoch."""

    TRAIN = 'train'
    TEST = 'test'
    SPLIT_CHOICES = [(TRAIN, 'Train'), (TEST, 'Test')]

    run = models.ForeignKey(TrainingRun, on_delete=models.CASCADE, related_name='metrics')
    epoch = models.PositiveIntegerField()
    layer = models.PositiveIntegerField()
    split = models.CharField(max_length=5, choices=SPLIT_CHOICES, default=TRAIN)
    loss = models.FloatField(null=True, blank=True)
    top1 = models.FloatField()

    class Meta:
        ordering = ['run', 'epoch', 'split', 'layer']
        constraints = [
            models.UniqueConstraint(fields=['run', 'epoch', 'layer', 'split'], name='unique_layer_epoch_metric'),
        ]
