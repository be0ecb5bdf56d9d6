"""
Raw tensor blobs described by a JSON manifest.

Example manifest::

    {
      "version": 1,
      "num_classes": 10,
      "mean": [0.5], "std": [0.25],
      "splits": {
        "train": {"images": "train-images.bin", "labels": "train-labels.bin",
                  "shape": [5000, 1, 28, 28], "dtype": "<f4", "label_dtype": "<i8"},
        "test":  {...}
      }
    }

Blob paths are relative to the manifest. Blobs are little-endian and read through ``numpy.memmap``.
"""

import json
import logging
from pathlib import Path

import numpy as np

from engine.exceptions import DatasetError

from .dataset import SPLITS, Dataset, DatasetSplits


logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
IMAGE_DTYPES = ('|u1', '<f4', '<f8')
LABEL_DTYPES = ('|u1', '<i4', '<i8')


def _split(base, name, entry, num_classes, mean, std):
    try:
        shape = tuple(int(d) for d in entry['shape'])
        image_dtype = np.dtype(entry.get('dtype', '<f4'))
        label_dtype = np.dtype(entry.get('label_dtype', '<i8'))
        image_path, label_path = base / entry['images'], base / entry['labels']
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"manifest split {name!r}: invalid entry ({exc})") from None
    if image_dtype.str not in IMAGE_DTYPES or label_dtype.str not in LABEL_DTYPES:
        raise DatasetError(f"manifest split {name!r}: unsupported dtypes {image_dtype.str}/{label_dtype.str}")
    if len(shape) != 4:
        raise DatasetError(f"manifest split {name!r}: shape must be (N, C, H, W), got {shape}")

    expected = int(np.prod(shape)) * image_dtype.itemsize
    for path, size in ((image_path, expected), (label_path, shape[0] * label_dtype.itemsize)):
        if not path.exists():
            raise DatasetError(f"{path}: missing blob for split {name!r}")
        if path.stat().st_size != size:
            raise DatasetError(f"{path}: {path.stat().st_size} bytes, shape needs {size}")

    images = np.memmap(image_path, dtype=image_dtype, mode='r', shape=shape)
    labels = np.fromfile(label_path, dtype=label_dtype)
    return Dataset(np.array(images), labels, num_classes, name, mean, std, name=base.name)


def load_manifest(path, num_classes=None, mean=(), std=()):
    """Read a manifest and its blobs into `DatasetSplits`."""

    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get('version') != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version {manifest.get('version')!r}")
    num_classes = num_classes or manifest.get('num_classes')
    if not num_classes:
        raise DatasetError(f"{path}: num_classes is required")
    mean = mean or tuple(manifest.get('mean', ()))
    std = std or tuple(manifest.get('std', ()))
    splits = manifest.get('splits') or {}
    missing = [split for split in SPLITS if split not in splits]
    if missing:
        raise DatasetError(f"{path}: manifest lacks split(s) {', '.join(missing)}")
    loaded = {split: _split(path.parent, split, splits[split], num_classes, mean, std) for split in SPLITS}
    return DatasetSplits(loaded['train'], loaded['test'], meta={'format': 'manifest', 'path': str(path)})


def export_manifest(splits, directory):
    """
    Write both splits as little-endian blobs plus ``manifest.json``.

    Returns:
        Path: The manifest file.
    """

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for split in SPLITS:
        dataset = splits[split]
        if dataset.images.dtype == np.uint8:
            dtype = np.dtype('u1')
        else:
            dtype = np.dtype('<f8' if dataset.images.dtype.itemsize == 8 else '<f4')
        images_name, labels_name = f"{split}-images.bin", f"{split}-labels.bin"
        np.ascontiguousarray(dataset.images, dtype=dtype).tofile(directory / images_name)
        np.ascontiguousarray(dataset.labels, dtype='<i8').tofile(directory / labels_name)
        entries[split] = {
            'images': images_name,
            'labels': labels_name,
            'shape': list(dataset.images.shape),
            'dtype': dtype.str,
            'label_dtype': '<i8',
        }
    train = splits.train
    manifest = {
        'version': MANIFEST_VERSION,
        'num_classes': train.num_classes,
        'mean': list(train.mean),
        'std': list(train.std),
        'splits': entries,
    }
    path = directory / 'manifest.json'
    path.write_text(json.dumps(manifest, indent=2), encoding='utf-8')
    logger.info("Exported %s train / %s test images to %s", len(splits.train), len(splits.test), path)
    return path
