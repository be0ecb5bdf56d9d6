"""
Synthetic stand-in corpus: Gaussian class prototypes plus pixel noise.

Each class gets a smooth random prototype (drawn at a quarter of the resolution and upsampled); samples are the
prototype plus independent Gaussian noise, clipped to 0..1. Labels are balanced.
"""

import logging

import numpy as np

from engine.exceptions import DatasetError

from .dataset import Dataset, DatasetSplits


logger = logging.getLogger(__name__)


def class_prototypes(num_classes, channels, size, rng, coarse=4):
    coarse_size = max(1, size // coarse)
    base = rng.normal(0.5, 0.25, size=(num_classes, channels, coarse_size, coarse_size))
    factor = -(-size // coarse_size)
    prototypes = np.repeat(np.repeat(base, factor, axis=2), factor, axis=3)[:, :, :size, :size]
    return np.clip(prototypes, 0.0, 1.0)


def _sample(prototypes, count, noise, rng):
    num_classes = len(prototypes)
    labels = rng.permutation(np.arange(count) % num_classes)
    images = prototypes[labels] + noise * 0.25 * rng.standard_normal((count,) + prototypes.shape[1:])
    return np.clip(images, 0.0, 1.0), labels


def make_synthetic(num_classes, channels, size, train_size=5000, test_size=1000, noise=1.0, seed=0,
                   mean=(), std=()):
    """
    Generate train and test splits that share the class prototypes.

    Args:
        noise (float): Noise level; 1.0 draws pixel noise with standard deviation 0.25.
        seed (int): Seed for prototypes and samples.

    Returns:
        DatasetSplits
    """

    if num_classes < 2 or channels < 1 or size < 1:
        raise DatasetError(f"cannot generate {num_classes} classes of {channels}x{size}x{size} images")
    prototype_rng, train_rng, test_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    prototypes = class_prototypes(num_classes, channels, size, prototype_rng)
    train_images, train_labels = _sample(prototypes, train_size, noise, train_rng)
    test_images, test_labels = _sample(prototypes, test_size, noise, test_rng)
    if not mean:
        mean = tuple(float(v) for v in train_images.mean(axis=(0, 2, 3)))
        std = tuple(float(v) for v in train_images.std(axis=(0, 2, 3)) + 1e-12)
    name = f"synthetic-{num_classes}c-{channels}x{size}"
    logger.debug("Generated %s (%s train / %s test, noise %s, seed %s)", name, train_size, test_size, noise, seed)
    return DatasetSplits(
        Dataset(train_images, train_labels, num_classes, 'train', mean, std, name=name),
        Dataset(test_images, test_labels, num_classes, 'test', mean, std, name=name),
        meta={'format': 'synthetic', 'seed': seed, 'noise': noise},
    )
