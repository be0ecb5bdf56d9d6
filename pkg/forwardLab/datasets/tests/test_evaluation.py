"""
Tests for whole-split evaluation of every exit.
"""
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from datasets.dataset import Dataset
from datasets.evaluation import check_compatible, evaluate, extract_logits
from engine.exceptions import CheckpointError, DatasetError
from training.config import arch_hash
from training.fusion import FusionHead
from training.network import Network
from training.tests.factories import tiny_arch


class EvaluateTest(SimpleTestCase):
    """Test evaluate against per-sample recounts."""

    def setUp(self):
        self.arch = tiny_arch(num_layers=3, pools=(1,))
        self.network = Network(self.arch, 1, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        self.dataset = Dataset(rng.random((11, 2, 8, 8)), rng.integers(0, 3, size=11), num_classes=3, split='test')

    def recount(self):
        """Per-exit correct counts, one image at a time."""

        correct = np.zeros(len(self.network.exits))
        for image, label in zip(self.dataset.images, self.dataset.labels):
            logits = self.network.exit_logits(image[None])[0]
            correct += np.argmax(logits, axis=1) == label
        return 100.0 * correct / len(self.dataset)

    def test_logit_stack_shape(self):
        stack = extract_logits(self.network, self.dataset, batch_size=4)

        self.assertEqual(stack.shape, (11, 3, 3))
        assert_allclose(stack, self.network.predict_logits(self.dataset.images), rtol=1e-12)

    def test_per_layer_accuracy_matches_recount(self):
        result = evaluate(self.network, self.dataset, batch_size=4)

        assert_allclose(result.per_layer_top1, self.recount(), rtol=1e-12)
        self.assertEqual(result.layers, [0, 1, 2])
        self.assertEqual(result.best_top1, max(result.per_layer_top1))
        self.assertIsNone(result.fused_top1)
        self.assertEqual(result.split, 'test')

    def test_evaluation_is_deterministic(self):
        first = evaluate(self.network, self.dataset)
        second = evaluate(self.network, self.dataset, batch_size=3)

        self.assertEqual(first.per_layer_top1, second.per_layer_top1)
        self.assertEqual(first.best_layer, second.best_layer)

    def test_best_layer_chosen_on_selection_split(self):
        result = evaluate(self.network, self.dataset, selection_top1=[10.0, 90.0, 90.0])

        self.assertEqual(result.best_layer, 2)
        self.assertEqual(result.best_top1, result.per_layer_top1[2])

    def test_fused_accuracy(self):
        head = FusionHead(alpha=np.array([0.0, 1.0, -1.0]))
        stack = extract_logits(self.network, self.dataset)

        result = evaluate(self.network, self.dataset, fusion=head, logit_stack=stack)

        fused = np.einsum('blk,l->bk', stack, head.weights)
        expected = 100.0 * np.mean(np.argmax(fused, axis=1) == self.dataset.labels)
        self.assertAlmostEqual(result.fused_top1, expected)
        assert_allclose(result.fusion_weights, head.weights, rtol=1e-12)
        self.assertEqual([row['layer'] for row in result.as_rows()], [0, 1, 2])
        assert_array_equal(result.curve.acc, result.per_layer_top1)

    def test_checkpoint_hash(self):
        evaluate(self.network, self.dataset, checkpoint_hash=arch_hash(self.arch))

        with self.assertRaises(CheckpointError):
            evaluate(self.network, self.dataset, checkpoint_hash='0' * 64)

    def test_empty_split(self):
        empty = Dataset(np.zeros((0, 2, 8, 8)), [], num_classes=3)

        self.assertEqual(extract_logits(self.network, empty).shape, (0, 3, 3))


class CompatibilityTest(SimpleTestCase):
    """Test check_compatible."""

    def setUp(self):
        self.arch = tiny_arch(input_channels=2, size=8, num_classes=3)

    def test_matching_split(self):
        check_compatible(self.arch, Dataset(np.zeros((1, 2, 8, 8)), [0], num_classes=3))

    def test_mismatches(self):
        cases = {
            'channels': Dataset(np.zeros((1, 3, 8, 8)), [0], num_classes=3),
            'size': Dataset(np.zeros((1, 2, 6, 6)), [0], num_classes=3),
            'classes': Dataset(np.zeros((1, 2, 8, 8)), [0], num_classes=5),
        }
        for case, dataset in cases.items():
            with self.subTest(case=case):
                with self.assertRaises(DatasetError):
                    check_compatible(self.arch, dataset)
