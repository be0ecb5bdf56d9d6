"""
This module contains the serializers of forwardLab.

* The experiment configuration serializers validate the YAML configuration files (and configurations posted to the
  REST API) before `training.config` turns them into frozen dataclasses.
* `TrainingRunSerializer`, `TrainingRunCreateSerializer` and `LayerEpochMetricSerializer` represent recorded runs.
* `DiagnoseSerializer` validates the input of the diagnostics endpoint.
"""

from django.conf import settings
from rest_framework import serializers

from engine.blocks import NORMS
from engine.exceptions import ConfigError
from training.config import EXECUTIONS, OPTIMIZERS, SCHEMA_VERSION, arch_hash, load_config, load_preset
from training.models import LayerEpochMetric, TrainingRun


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects keys it does not declare, so misspelled configuration keys are reported."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(str(key) for key in set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({unknown[0]: ["Unknown key."]})
        return super().to_internal_value(data)


def _fill_defaults(attrs, nested):
    """Validate an empty mapping for every nested section that was left out."""

    for key, serializer_class in nested.items():
        if key not in attrs:
            serializer = serializer_class(data={})
            serializer.is_valid(raise_exception=True)
            attrs[key] = serializer.validated_data
    return attrs


class BlockSerializer(StrictSerializer):
    """One convolutional block and its goodness head settings."""

    out_channels = serializers.IntegerField(min_value=1)
    pool = serializers.BooleanField(default=False)
    dropout_p = serializers.FloatField(min_value=0.0, max_value=0.95, default=0.1)
    norm = serializers.ChoiceField(choices=NORMS, default='rmsnorm')
    scales = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=2, max_length=2,
                                   default=(1, 2))
    reduction_ratio = serializers.IntegerField(min_value=1, default=8)
    include_cc = serializers.BooleanField(default=True)
    include_multiscale = serializers.BooleanField(default=True)

    def validate_scales(self, value):
        if value[0] >= value[1]:
            raise serializers.ValidationError("The first scale must be smaller than the second.")
        return value


class ArchSerializer(StrictSerializer):
    input_channels = serializers.IntegerField(min_value=1)
    input_size = serializers.IntegerField(min_value=1)
    num_classes = serializers.IntegerField(min_value=2)
    stem = serializers.BooleanField(default=False)
    fal = serializers.BooleanField(default=True)
    group_boundaries = serializers.ListField(child=serializers.IntegerField(min_value=1), default=())
    blocks = BlockSerializer(many=True, allow_empty=False)


class OptimizerSerializer(StrictSerializer):
    name = serializers.ChoiceField(choices=OPTIMIZERS, default='sgd')
    lr_start = serializers.FloatField(min_value=0.0, default=0.05)
    lr_end = serializers.FloatField(min_value=0.0, default=5e-4)
    momentum = serializers.FloatField(min_value=0.0, max_value=0.999, default=0.9)
    weight_decay = serializers.FloatField(min_value=0.0, default=1e-4)
    betas = serializers.ListField(child=serializers.FloatField(min_value=0.0, max_value=0.9999), min_length=2,
                                  max_length=2, default=(0.9, 0.999))
    eps = serializers.FloatField(min_value=1e-12, default=1e-8)

    def validate(self, attrs):
        if attrs['lr_end'] > attrs['lr_start']:
            raise serializers.ValidationError({'lr_end': ["Must not exceed lr_start."]})
        return attrs


class AugmentSerializer(StrictSerializer):
    crop_padding = serializers.IntegerField(min_value=0, default=0)
    hflip = serializers.BooleanField(default=False)
    jitter = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.0)
    grayscale_p = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.0)


class FusionSerializer(StrictSerializer):
    epochs = serializers.IntegerField(min_value=0, default=500)
    lr = serializers.FloatField(min_value=1e-12, default=0.01)
    selection_split = serializers.ChoiceField(choices=('train', 'test'), default='train')


class DataSerializer(StrictSerializer):
    source = serializers.ChoiceField(choices=('synthetic', 'idx', 'manifest'), default='synthetic')
    path = serializers.CharField(allow_blank=True, default='')
    train_size = serializers.IntegerField(min_value=1, default=5000)
    test_size = serializers.IntegerField(min_value=1, default=1000)
    noise = serializers.FloatField(min_value=0.0, default=1.0)
    seed = serializers.IntegerField(min_value=0, default=0)
    mean = serializers.ListField(child=serializers.FloatField(), default=())
    std = serializers.ListField(child=serializers.FloatField(min_value=1e-12), default=())
    workers = serializers.IntegerField(min_value=1, default=2)
    prefetch = serializers.IntegerField(min_value=1, default=4)

    def validate(self, attrs):
        if attrs['source'] != 'synthetic' and not attrs['path']:
            raise serializers.ValidationError({'path': [f"Required for {attrs['source']} data."]})
        if len(attrs['mean']) != len(attrs['std']):
            raise serializers.ValidationError({'std': ["Needs as many values as mean."]})
        return attrs


class TrainSerializer(StrictSerializer):
    epochs = serializers.IntegerField(min_value=0)
    batch_size = serializers.IntegerField(min_value=1)
    optimizer = OptimizerSerializer(required=False)
    grad_clip = serializers.FloatField(min_value=1e-12, allow_null=True, default=None)
    hgb_m = serializers.IntegerField(min_value=1, default=1)
    execution = serializers.ChoiceField(choices=EXECUTIONS, default='greedy')
    warmup_epochs = serializers.IntegerField(min_value=0, default=5)
    seed = serializers.IntegerField(min_value=0, default=0)
    precision = serializers.ChoiceField(choices=('float64', 'float32'),
                                        default=lambda: settings.FORWARDLAB_ENGINE['PRECISION'])
    deterministic = serializers.BooleanField(default=lambda: settings.FORWARDLAB_ENGINE['DETERMINISTIC'])
    augment = AugmentSerializer(required=False)
    fusion = FusionSerializer(required=False)

    def validate(self, attrs):
        return _fill_defaults(attrs, {'optimizer': OptimizerSerializer, 'augment': AugmentSerializer,
                                      'fusion': FusionSerializer})


class ExperimentConfigSerializer(StrictSerializer):
    """
    Serializer for a whole experiment configuration: ``schema_version``, optional ``name``, ``arch``, ``train``
    and an optional ``data`` section.
    """

    schema_version = serializers.IntegerField(default=SCHEMA_VERSION)
    name = serializers.CharField(required=False, allow_blank=True)
    arch = ArchSerializer()
    train = TrainSerializer()
    data = DataSerializer(required=False)

    def validate_schema_version(self, value):
        if value != SCHEMA_VERSION:
            raise serializers.ValidationError(f"Unsupported schema version {value}, expected {SCHEMA_VERSION}.")
        return value

    def validate(self, attrs):
        return _fill_defaults(attrs, {'data': DataSerializer})


class LayerEpochMetricSerializer(serializers.ModelSerializer):
    """Serializer for one per-layer metric row."""

    class Meta:
        model = LayerEpochMetric
        fields = ['epoch', 'layer', 'split', 'loss', 'top1']


class TrainingRunSerializer(serializers.ModelSerializer):
    """
    Serializer for the TrainingRun model. The per-layer metrics of the latest epoch are included so a run can be
    inspected with a single request.
    """

    metrics = serializers.SerializerMethodField()

    class Meta:
        model = TrainingRun
        fields = ['id', 'name', 'preset', 'config_path', 'overrides', 'config_hash', 'out_dir', 'status',
                  'execution', 'hgb_m', 'epochs_done', 'best_layer', 'best_top1', 'fused_top1',
                  'measured_peak_bytes', 'estimated_peak_bytes', 'error', 'created', 'finished', 'metrics']
        read_only_fields = fields

    def get_metrics(self, obj):
        return LayerEpochMetricSerializer(obj.latest_metrics(), many=True).data


class TrainingRunCreateSerializer(serializers.ModelSerializer):
    """
    Serializer queueing a new run from a preset or a configuration file, with optional ``key=value``
    overrides. The configuration is loaded and validated before the run is stored.
    """

    overrides = serializers.ListField(child=serializers.CharField(), default=list)

    class Meta:
        model = TrainingRun
        fields = ['id', 'name', 'preset', 'config_path', 'overrides']

    def validate(self, attrs):
        preset, config_path = attrs.get('preset'), attrs.get('config_path')
        if bool(preset) == bool(config_path):
            raise serializers.ValidationError("Give exactly one of preset and config_path.")
        try:
            if preset:
                arch, plan = load_preset(preset, attrs['overrides'])
            else:
                arch, plan = load_config(config_path, attrs['overrides'])
        except ConfigError as exc:
            raise serializers.ValidationError({'config': [exc.render()]})
        attrs['config_hash'] = arch_hash(arch)
        attrs['execution'] = plan.execution
        attrs['hgb_m'] = plan.hgb_m
        return attrs


class DiagnoseSerializer(serializers.Serializer):
    """Input of the diagnostics endpoint: one or two per-layer curves and optional fusion weights."""

    curve_a = serializers.ListField(child=serializers.FloatField(min_value=0.0, max_value=100.0), min_length=1)
    curve_b = serializers.ListField(child=serializers.FloatField(min_value=0.0, max_value=100.0), required=False)
    weights_a = serializers.ListField(child=serializers.FloatField(min_value=0.0), required=False)
    weights_b = serializers.ListField(child=serializers.FloatField(min_value=0.0), required=False)
    name_a = serializers.CharField(default='a')
    name_b = serializers.CharField(default='b')

    def validate(self, attrs):
        if 'curve_b' in attrs and len(attrs['curve_b']) != len(attrs['curve_a']):
            raise serializers.ValidationError({'curve_b': ["Must have as many layers as curve_a."]})
        if 'weights_b' in attrs and 'curve_b' not in attrs:
            raise serializers.ValidationError({'weights_b': ["Given without curve_b."]})
        return attrs
