from django.contrib import admin
from .models import LayerEpochMetric, TrainingRun


admin.site.register(TrainingRun)
admin.site.register(LayerEpochMetric)
