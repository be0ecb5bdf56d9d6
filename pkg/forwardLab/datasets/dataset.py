"""
In-memory image classification splits.

Images are kept as raw pixel values in (N, C, H, W) layout; normalization is applied when batches are drawn so
augmentation always works on pixel values.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from engine.exceptions import DatasetError, NonFiniteError

from .idx import read_idx


logger = logging.getLogger(__name__)

SPLITS = ('train', 'test')
FORMATS = ('idx', 'manifest')


@dataclass
class Dataset:
    """
    One split of a labelled image set.

    Attributes:
        images (ndarray): Pixel values (N, C, H, W), uint8 in 0..255 or floats in 0..1.
        labels (ndarray): Class indices (N,) in ``[0, num_classes)``.
        mean / std (tuple): Per-channel normalization constants in 0..1 pixel units.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = 'train'
    mean: tuple = ()
    std: tuple = ()
    name: str = ''

    def __post_init__(self):
        images = np.asarray(self.images)
        if images.ndim == 3:
            images = images[:, None, :, :]
        if images.ndim != 4:
            raise DatasetError(f"{self.name or self.split}: images must be (N, C, H, W), got shape {images.shape}")
        self.images = images
        self.labels = np.asarray(self.labels).astype(np.int64).reshape(-1)
        self.validate()
        channels = images.shape[1]
        self.mean = tuple(self.mean) if self.mean else (0.0,) * channels
        self.std = tuple(self.std) if self.std else (1.0,) * channels
        if len(self.mean) != channels or len(self.std) != channels:
            raise DatasetError(f"normalization needs {channels} values per channel")

    def validate(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{self.name or self.split}: {len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            bad = self.labels[(self.labels < 0) | (self.labels >= self.num_classes)][0]
            raise DatasetError(f"{self.name or self.split}: label {bad} outside 0..{self.num_classes - 1}")
        if self.images.dtype.kind == 'f' and not np.all(np.isfinite(self.images)):
            raise NonFiniteError(f"{self.name or self.split}: images contain NaN or Inf")
        return self

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]

    def pixels(self, indices=None, dtype=np.float64):
        """Pixel values scaled to 0..1 in ``dtype``."""

        images = self.images if indices is None else self.images[indices]
        if images.dtype == np.uint8:
            return images.astype(dtype) / dtype(255.0)
        return images.astype(dtype)

    def subset(self, indices, split=None):
        return Dataset(self.images[indices], self.labels[indices], self.num_classes, split or self.split,
                       self.mean, self.std, self.name)


@dataclass
class DatasetSplits:
    train: Dataset
    test: Dataset
    meta: dict = field(default_factory=dict)

    def __getitem__(self, split):
        if split not in SPLITS:
            raise KeyError(split)
        return getattr(self, split)


def _idx_split(directory, split):
    for suffix in ('.idx', '.idx.gz'):
        images, labels = directory / f"{split}-images{suffix}", directory / f"{split}-labels{suffix}"
        if images.exists() and labels.exists():
            return images, labels
    raise DatasetError(f"{directory}: missing {split}-images.idx / {split}-labels.idx")


def load_idx_splits(directory, num_classes=None, mean=(), std=()):
    """Read ``{train,test}-{images,labels}.idx[.gz]`` from a directory."""

    directory = Path(directory)
    arrays = {}
    for split in SPLITS:
        image_path, label_path = _idx_split(directory, split)
        arrays[split] = (read_idx(image_path), read_idx(label_path))
    if num_classes is None:
        num_classes = int(max(labels.max() for _, labels in arrays.values() if len(labels))) + 1
    splits = {
        split: Dataset(images, labels, num_classes, split, mean, std, name=directory.name)
        for split, (images, labels) in arrays.items()
    }
    return DatasetSplits(splits['train'], splits['test'], meta={'format': 'idx', 'path': str(directory)})


def load_dataset(path, format=None, num_classes=None, mean=(), std=()):
    """
    Load train and test splits from an IDX directory or a manifest file.

    Args:
        path (str | Path): IDX directory, or manifest JSON file.
        format (str | None): ``idx`` or ``manifest``; guessed from ``path`` when omitted.
        num_classes (int | None): Label range K; labels outside ``[0, K)`` are rejected.

    Returns:
        DatasetSplits

    Raises:
        DatasetError: For missing files, bad magic, shape or label violations.
    """

    from .manifest import load_manifest

    path = Path(path)
    if format is None:
        format = 'manifest' if path.suffix == '.json' else 'idx'
    if format not in FORMATS:
        raise DatasetError(f"unknown dataset format {format!r}, expected one of {FORMATS}")
    if not path.exists():
        raise DatasetError(f"{path}: no such dataset")
    if format == 'idx':
        splits = load_idx_splits(path, num_classes, mean, std)
    else:
        splits = load_manifest(path, num_classes, mean, std)
    logger.info("Loaded %s dataset %s: %s train / %s test images of shape %s, %s classes",
                format, path, len(splits.train), len(splits.test), splits.train.shape, splits.train.num_classes)
    return splits


def dataset_for(arch, spec, data_root=None):
    """
    Train and test splits described by a `DataSpec`, shaped for ``arch``.

    Relative paths are resolved against ``data_root`` (``FORWARDLAB_DATA_ROOT`` for runs).
    """

    from .synthetic import make_synthetic

    if spec.source == 'synthetic':
        return make_synthetic(arch.num_classes, arch.input_channels, arch.input_size, spec.train_size,
                              spec.test_size, spec.noise, spec.seed, spec.mean, spec.std)
    path = Path(spec.path)
    if not path.is_absolute() and data_root is not None:
        path = Path(data_root) / path
    return load_dataset(path, format=spec.source, num_classes=arch.num_classes, mean=spec.mean, std=spec.std)
