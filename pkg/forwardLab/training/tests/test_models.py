"""
Tests for models and signals.
"""
from django.db import IntegrityError, transaction
from django.test import TestCase

from training.models import LayerEpochMetric, TrainingRun


class TrainingRunModelTest(TestCase):
    """Test TrainingRun and the metric signal."""

    def setUp(self):
        """Test create a queued run for all tests."""

        self.run = TrainingRun.objects.create(name='desk8-28', preset='desk8-28')

    def add(self, epoch, layer, top1, split=LayerEpochMetric.TRAIN):
        return LayerEpochMetric.objects.create(run=self.run, epoch=epoch, layer=layer, split=split, loss=1.0,
                                               top1=top1)

    def test_defaults(self):
        self.assertEqual(self.run.status, TrainingRun.QUEUED)
        self.assertEqual(self.run.overrides, [])
        self.assertEqual(str(self.run), 'desk8-28 (queued)')

    def test_latest_metrics_uses_latest_epoch(self):
        self.add(0, 0, 30.0)
        self.add(0, 1, 40.0)
        self.add(1, 1, 55.0)
        self.add(1, 0, 50.0)

        rows = list(self.run.latest_metrics())

        self.assertEqual([(row.epoch, row.layer) for row in rows], [(1, 0), (1, 1)])

    def test_latest_metrics_prefers_test_split(self):
        self.add(2, 0, 60.0)
        self.add(2, 1, 70.0)
        self.add(2, 1, 65.0, split=LayerEpochMetric.TEST)

        rows = list(self.run.latest_metrics())

        self.assertEqual([(row.layer, row.split) for row in rows], [(1, LayerEpochMetric.TEST)])

    def test_no_metrics(self):
        self.assertEqual(list(self.run.latest_metrics()), [])

        self.run.update_summary()
        self.run.refresh_from_db()

        self.assertIsNone(self.run.best_layer)
        self.assertEqual(self.run.epochs_done, 0)

    def test_signal_updates_summary(self):
        """Test every saved metric refreshes the run summary."""

        self.add(0, 0, 20.0)
        self.add(0, 1, 35.0)
        self.add(0, 2, 30.0)
        self.run.refresh_from_db()

        self.assertEqual(self.run.epochs_done, 1)
        self.assertEqual(self.run.best_layer, 1)
        self.assertEqual(self.run.best_top1, 35.0)

    def test_summary_ties_go_deeper(self):
        self.add(3, 0, 42.0)
        self.add(3, 1, 42.0)
        self.run.refresh_from_db()

        self.assertEqual(self.run.best_layer, 1)
        self.assertEqual(self.run.epochs_done, 4)

    def test_metric_rows_are_unique(self):
        self.add(0, 0, 10.0)

        with self.assertRaises(IntegrityError), transaction.atomic():
            self.add(0, 0, 11.0)

    def test_deleting_run_deletes_metrics(self):
        self.add(0, 0, 10.0)

        self.run.delete()

        self.assertEqual(LayerEpochMetric.objects.count(), 0)
