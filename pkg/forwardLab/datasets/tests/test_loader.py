"""
Tests for batch transforms and the prefetching loader.
"""
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from datasets.dataset import Dataset
from datasets.loader import BatchLoader, eval_loader
from datasets.transforms import (
    TrainAugment, color_jitter, denormalize, normalize, random_crop, random_grayscale, random_hflip
)
from engine.exceptions import ShapeError
from training.config import AugmentSpec


AUGMENT = AugmentSpec(crop_padding=1, hflip=True, jitter=0.2, grayscale_p=0.5)


def rgb_dataset(count=10, size=6, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(count, 3, size, size), dtype=np.uint8)
    return Dataset(images, np.arange(count) % 4, num_classes=4, mean=(0.4, 0.5, 0.6), std=(0.2, 0.25, 0.3))


class TransformTest(SimpleTestCase):
    """Test the individual transforms."""

    def setUp(self):
        self.images = np.random.default_rng(1).random((4, 3, 5, 5))

    def test_normalize_inverts(self):
        mean, std = (0.1, 0.2, 0.3), (0.5, 0.25, 2.0)

        normalized = normalize(self.images, mean, std)

        assert_allclose(normalized[:, 2], (self.images[:, 2] - 0.3) / 2.0, rtol=1e-12)
        assert_allclose(denormalize(normalized, mean, std), self.images, rtol=1e-12, atol=1e-15)

    def test_normalize_keeps_precision(self):
        images = self.images.astype(np.float32)

        self.assertEqual(normalize(images, (0.5,) * 3, (0.5,) * 3).dtype, np.float32)

    def test_normalize_channel_mismatch(self):
        with self.assertRaises(ShapeError):
            normalize(self.images, (0.0, 0.0), (1.0, 1.0))

    def test_random_crop_is_shifted_window(self):
        cropped = random_crop(self.images, 2, np.random.default_rng(3))

        offsets = np.random.default_rng(3).integers(0, 5, size=(4, 2))
        padded = np.pad(self.images, ((0, 0), (0, 0), (2, 2), (2, 2)))
        for index, (dy, dx) in enumerate(offsets):
            assert_array_equal(cropped[index], padded[index, :, dy:dy + 5, dx:dx + 5])
        self.assertIs(random_crop(self.images, 0, np.random.default_rng(3)), self.images)

    def test_hflip(self):
        flipped = random_hflip(self.images, np.random.default_rng(0), p=1.0)
        kept = random_hflip(self.images, np.random.default_rng(0), p=0.0)

        assert_array_equal(flipped, self.images[..., ::-1])
        assert_array_equal(kept, self.images)

    def test_color_jitter_stays_in_range(self):
        jittered = color_jitter(self.images, 0.8, np.random.default_rng(0))

        self.assertEqual(jittered.shape, self.images.shape)
        self.assertTrue(np.all((jittered >= 0.0) & (jittered <= 1.0)))
        self.assertIs(color_jitter(self.images, 0.0, np.random.default_rng(0)), self.images)

    def test_grayscale(self):
        gray = random_grayscale(self.images, 1.0, np.random.default_rng(0))

        assert_allclose(gray[:, 0], gray[:, 1], rtol=0)
        assert_allclose(gray[:, 0], np.einsum('bchw,c->bhw', self.images, [0.299, 0.587, 0.114]), rtol=1e-12)
        single = self.images[:, :1]
        self.assertIs(random_grayscale(single, 1.0, np.random.default_rng(0)), single)

    def test_disabled_policy_is_identity(self):
        augment = TrainAugment(AugmentSpec())

        assert_array_equal(augment(self.images, np.random.default_rng(0)), self.images)


class BatchLoaderTest(SimpleTestCase):
    """Test BatchLoader ordering, normalization and determinism."""

    def test_eval_order_and_normalization(self):
        dataset = rgb_dataset(count=7)

        batches = list(eval_loader(dataset, batch_size=3))

        self.assertEqual([len(labels) for _, labels in batches], [3, 3, 1])
        assert_array_equal(np.concatenate([labels for _, labels in batches]), dataset.labels)
        expected = normalize(dataset.pixels(), dataset.mean, dataset.std)
        assert_allclose(np.concatenate([images for images, _ in batches]), expected, rtol=1e-12)
        self.assertEqual(len(eval_loader(dataset, batch_size=3)), 3)

    def test_shuffled_epoch_covers_every_sample(self):
        dataset = rgb_dataset(count=10)
        loader = BatchLoader(dataset, 4, order_rng=np.random.default_rng(5))

        labels = np.concatenate([labels for _, labels in loader.epoch_batches(0)])

        self.assertEqual(sorted(labels.tolist()), sorted(dataset.labels.tolist()))

    def test_batches_do_not_depend_on_worker_count(self):
        dataset = rgb_dataset(count=17)

        def epoch(workers):
            loader = BatchLoader(dataset, 4, order_rng=np.random.default_rng(1), augment=AUGMENT,
                                 augment_rng=np.random.default_rng(2), workers=workers, prefetch=2,
                                 deterministic=False)
            return list(loader)

        single, pooled = epoch(1), epoch(4)

        self.assertEqual(len(single), 5)
        for (images_a, labels_a), (images_b, labels_b) in zip(single, pooled):
            assert_array_equal(images_a, images_b)
            assert_array_equal(labels_a, labels_b)

    def test_deterministic_forces_one_worker(self):
        loader = BatchLoader(rgb_dataset(), 4, workers=8, deterministic=True)

        self.assertEqual(loader.workers, 1)

    def test_float32_batches(self):
        images, _ = next(iter(eval_loader(rgb_dataset(), batch_size=4, dtype=np.float32)))

        self.assertEqual(images.dtype, np.float32)

    def test_stopping_early(self):
        loader = BatchLoader(rgb_dataset(count=40), 2, prefetch=1)
        iterator = iter(loader)

        first_images, first_labels = next(iterator)
        iterator.close()

        self.assertEqual(first_images.shape, (2, 3, 6, 6))
        assert_array_equal(first_labels, [0, 1])
