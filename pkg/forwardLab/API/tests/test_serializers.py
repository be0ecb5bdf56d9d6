"""
Test suite for the serializers in the API module: experiment configuration validation, run representation and
diagnostics input.
"""
from django.test import SimpleTestCase, TestCase, override_settings

from API.serializers import (
    DiagnoseSerializer, ExperimentConfigSerializer, TrainingRunCreateSerializer, TrainingRunSerializer
)
from training.config import arch_hash, load_preset
from training.models import LayerEpochMetric, TrainingRun


def experiment(**train):
    return {
        'arch': {
            'input_channels': 1,
            'input_size': 8,
            'num_classes': 3,
            'blocks': [{'out_channels': 4}, {'out_channels': 8, 'pool': True}],
        },
        'train': {'epochs': 2, 'batch_size': 4, **train},
    }


class TestExperimentConfigSerializer(SimpleTestCase):
    """
    Test for the ExperimentConfigSerializer, covering defaults and the errors reported for invalid configurations.
    """

    def test_defaults_are_filled(self):
        """
        Test that omitted sections are validated as empty mappings and receive their defaults.
        """
        serializer = ExperimentConfigSerializer(data=experiment())

        self.assertTrue(serializer.is_valid(), serializer.errors)
        data = serializer.validated_data
        self.assertEqual(data['schema_version'], 1)
        self.assertEqual(data['train']['optimizer']['name'], 'sgd')
        self.assertEqual(data['train']['fusion']['epochs'], 500)
        self.assertEqual(data['data']['source'], 'synthetic')
        self.assertEqual(data['arch']['blocks'][1]['reduction_ratio'], 8)

    @override_settings(FORWARDLAB_ENGINE={'PRECISION': 'float32', 'DETERMINISTIC': False, 'MEASURE_MEMORY': False})
    def test_precision_default_from_settings(self):
        serializer = ExperimentConfigSerializer(data=experiment())

        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.validated_data['train']['precision'], 'float32')
        self.assertFalse(serializer.validated_data['train']['deterministic'])

    def test_unknown_key(self):
        data = experiment(batchsize=8)

        serializer = ExperimentConfigSerializer(data=data)

        self.assertFalse(serializer.is_valid())
        self.assertEqual(serializer.errors['train']['batchsize'], ['Unknown key.'])

    def test_unknown_block_key(self):
        data = experiment()
        data['arch']['blocks'][0]['pol'] = True

        serializer = ExperimentConfigSerializer(data=data)

        self.assertFalse(serializer.is_valid())
        self.assertIn('pol', str(serializer.errors['arch']))

    def test_invalid_values(self):
        """
        Test the cross-field checks of the nested serializers.
        """
        cases = {
            'lr_end': experiment(optimizer={'lr_start': 0.01, 'lr_end': 0.1}),
            'first scale': {**experiment(), 'arch': {**experiment()['arch'],
                                                     'blocks': [{'out_channels': 4, 'scales': [2, 1]}]}},
            'Required for idx data': {**experiment(), 'data': {'source': 'idx'}},
            'Unsupported schema version': {**experiment(), 'schema_version': 2},
        }
        for message, data in cases.items():
            with self.subTest(message=message):
                serializer = ExperimentConfigSerializer(data=data)

                self.assertFalse(serializer.is_valid())
                self.assertIn(message, str(serializer.errors))


class TestDiagnoseSerializer(SimpleTestCase):
    """
    Test for the DiagnoseSerializer.
    """

    def test_valid_pair(self):
        serializer = DiagnoseSerializer(data={'curve_a': [10, 20], 'curve_b': [15, 25], 'weights_b': [0.5, 0.5]})

        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.validated_data['name_a'], 'a')

    def test_invalid_input(self):
        cases = [
            ({'curve_a': [10, 20], 'curve_b': [15]}, 'curve_b'),
            ({'curve_a': [10, 20], 'weights_b': [1.0]}, 'weights_b'),
            ({'curve_a': [10, 120]}, 'curve_a'),
            ({'curve_a': []}, 'curve_a'),
        ]
        for data, field in cases:
            with self.subTest(data=data):
                serializer = DiagnoseSerializer(data=data)

                self.assertFalse(serializer.is_valid())
                self.assertIn(field, serializer.errors)


class TestTrainingRunSerializers(TestCase):
    """
    Test for the TrainingRun serializers.
    """

    def test_create_from_preset(self):
        """
        Test that the configuration is loaded and summarized before the run is stored.
        """
        serializer = TrainingRunCreateSerializer(data={'name': 'hybrid', 'preset': 'desk8-28',
                                                       'overrides': ['train.hgb_m=4']})

        self.assertTrue(serializer.is_valid(), serializer.errors)
        run = serializer.save()

        arch, _ = load_preset('desk8-28')
        self.assertEqual(run.hgb_m, 4)
        self.assertEqual(run.config_hash, arch_hash(arch))
        self.assertEqual(run.status, TrainingRun.QUEUED)

    def test_create_needs_exactly_one_source(self):
        for data in ({'name': 'x'}, {'name': 'x', 'preset': 'desk8-28', 'config_path': '/tmp/run.yaml'}):
            with self.subTest(data=data):
                serializer = TrainingRunCreateSerializer(data=data)

                self.assertFalse(serializer.is_valid())
                self.assertIn('exactly one', str(serializer.errors))

    def test_create_reports_config_errors(self):
        serializer = TrainingRunCreateSerializer(data={'name': 'x', 'preset': 'desk8-28',
                                                       'overrides': ['train.hgb_m=0']})

        self.assertFalse(serializer.is_valid())
        self.assertIn('config', serializer.errors)

    def test_run_includes_latest_metrics(self):
        run = TrainingRun.objects.create(name='desk8-28', preset='desk8-28')
        LayerEpochMetric.objects.create(run=run, epoch=0, layer=0, loss=1.0, top1=20.0)
        LayerEpochMetric.objects.create(run=run, epoch=1, layer=0, loss=0.8, top1=30.0)
        run.refresh_from_db()

        data = TrainingRunSerializer(run).data

        self.assertEqual(data['epochs_done'], 2)
        self.assertEqual(data['best_top1'], 30.0)
        self.assertEqual([row['epoch'] for row in data['metrics']], [1])
