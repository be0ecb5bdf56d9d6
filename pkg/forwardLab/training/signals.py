from django.db.models.signals import post_save
from django.dispatch import receiver
from .models import LayerEpochMetric


@receiver(post_save, sender=LayerEpochMetric)
def post_save_layer_epoch_metric(sender, instance, created, **kwargs):
    """
    Connected to the `post_save` signal of `LayerEpochMetric`. Every stored metric refreshes the summary
    fields of its run so the run list always shows the current best layer.

    Args:
        sender (Model): `LayerEpochMetric`.
        instance (LayerEpochMetric): The saved metric row.
        created (bool): Whether the row was created or updated.
        **kwargs: Additional keyword arguments passed by the signal.
    """

    instance.run.update_summary()
