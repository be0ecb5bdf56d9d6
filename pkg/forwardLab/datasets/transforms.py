"""
Batch transforms on (B, C, H, W) pixel arrays in 0..1.

Augmentation runs in train mode only; evaluation uses `normalize` alone. On single-channel images color jitter
reduces to brightness and contrast jitter and grayscale is a no-op.
"""

import numpy as np

from engine.exceptions import ShapeError


LUMA = np.array([0.299, 0.587, 0.114])


def _per_channel(values, channels, dtype):
    values = np.asarray(values, dtype=dtype)
    if values.shape != (channels,):
        raise ShapeError('C', channels, values.shape[0] if values.ndim else values.shape, op='normalize')
    return values[None, :, None, None]


def normalize(images, mean, std):
    images = np.asarray(images)
    dtype = images.dtype.type
    return (images - _per_channel(mean, images.shape[1], dtype)) / _per_channel(std, images.shape[1], dtype)


def denormalize(images, mean, std):
    images = np.asarray(images)
    dtype = images.dtype.type
    return images * _per_channel(std, images.shape[1], dtype) + _per_channel(mean, images.shape[1], dtype)


def random_crop(images, padding, rng):
    """Zero-pad every side by ``padding`` and crop back to the original size at a random offset per image."""

    if not padding:
        return images
    B, _, H, W = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    offsets = rng.integers(0, 2 * padding + 1, size=(B, 2))
    out = np.empty_like(images)
    for index, (dy, dx) in enumerate(offsets):
        out[index] = padded[index, :, dy:dy + H, dx:dx + W]
    return out


def random_hflip(images, rng, p=0.5):
    flip = rng.random(len(images)) < p
    out = images.copy()
    out[flip] = out[flip, :, :, ::-1]
    return out


def _gray(images):
    if images.shape[1] != 3:
        return images
    luma = np.einsum('bchw,c->bhw', images, LUMA.astype(images.dtype))
    return np.broadcast_to(luma[:, None], images.shape)


def color_jitter(images, strength, rng):
    """Random brightness, contrast and (for RGB) saturation factors in ``[1 - strength, 1 + strength]``."""

    if not strength:
        return images
    B = len(images)
    low, high = max(0.0, 1.0 - strength), 1.0 + strength
    brightness, contrast, saturation = (rng.uniform(low, high, size=(B, 1, 1, 1)).astype(images.dtype)
                                        for _ in range(3))
    out = images * brightness
    means = out.mean(axis=(1, 2, 3), keepdims=True)
    out = (out - means) * contrast + means
    if images.shape[1] == 3:
        gray = _gray(out)
        out = (out - gray) * saturation + gray
    return np.clip(out, 0.0, 1.0)


def random_grayscale(images, p, rng):
    if not p or images.shape[1] != 3:
        return images
    pick = rng.random(len(images)) < p
    out = images.copy()
    out[pick] = _gray(images[pick])
    return out


class TrainAugment:
    """
    The train-time augmentation policy of an `AugmentSpec`: crop with padding, horizontal flip, color jitter
    and random grayscale, in that order.
    """

    def __init__(self, spec):
        self.spec = spec

    def __call__(self, images, rng):
        spec = self.spec
        images = random_crop(images, spec.crop_padding, rng)
        if spec.hflip:
            images = random_hflip(images, rng)
        images = color_jitter(images, spec.jitter, rng)
        return random_grayscale(images, spec.grayscale_p, rng)
