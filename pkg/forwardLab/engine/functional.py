"""
Numpy kernels for the fixed op set, each as a forward/backward pair.

Every ``*_forward`` returns ``(output, cache)`` and the matching ``*_backward(cache, upstream)`` returns the
gradients with respect to the differentiable inputs, in argument order. The traced wrappers in `engine.ops` pair
them with a gradient group; the kernels themselves are plain functions of arrays and are tested directly against
loop oracles and finite differences.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError, TraceError


RMSNORM_EPS = 1e-6
POOL_EPS = 1e-12
BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.1


def _require_rank(x, rank, op):
    if x.ndim != rank:
        raise ShapeError('rank', rank, x.ndim, op=op)


def _require_trace(cache, op):
    if cache is None:
        raise TraceError(f"{op}: no forward trace to differentiate")


def _pad_hw(x):
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode='constant')


# Convolution

def conv2d_forward(x, weight, bias):
    """
    3x3 cross-correlation, zero padding 1, stride 1.

    Args:
        x: input of shape (B, C_in, H, W).
        weight: kernel of shape (C_out, C_in, 3, 3).
        bias: vector of length C_out.

    Returns:
        tuple: output of shape (B, C_out, H, W) and the trace needed by `conv2d_backward`.
    """

    _require_rank(x, 4, 'conv2d')
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError('kernel', (3, 3), weight.shape[2:], op='conv2d')
    if x.shape[1] != weight.shape[1]:
        raise ShapeError('C_in', weight.shape[1], x.shape[1], op='conv2d')
    if bias.shape != (weight.shape[0],):
        raise ShapeError('C_out', (weight.shape[0],), bias.shape, op='conv2d')

    windows = sliding_window_view(_pad_hw(x), (3, 3), axis=(2, 3))
    out = np.einsum('bchwij,ocij->bohw', windows, weight, optimize=True)
    out += bias[None, :, None, None]
    return out, (x, weight)


def conv2d_backward(cache, upstream):
    _require_trace(cache, 'conv2d')
    x, weight = cache
    grad_bias = upstream.sum(axis=(0, 2, 3))
    windows = sliding_window_view(_pad_hw(x), (3, 3), axis=(2, 3))
    grad_weight = np.einsum('bchwij,bohw->ocij', windows, upstream, optimize=True)
    # full correlation of the upstream gradient with the flipped kernel
    up_windows = sliding_window_view(_pad_hw(upstream), (3, 3), axis=(2, 3))
    grad_input = np.einsum('bohwij,ocij->bchw', up_windows, weight[:, :, ::-1, ::-1], optimize=True)
    return grad_input, grad_weight, grad_bias


# Elementwise

def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(cache, upstream):
    _require_trace(cache, 'relu')
    return (upstream * cache,)


def square_forward(x):
    return x * x, x


def square_backward(cache, upstream):
    _require_trace(cache, 'square')
    return (2.0 * cache * upstream,)


def sum_forward(x):
    return np.asarray(x.sum(dtype=np.float64), dtype=x.dtype), x.shape


def sum_backward(cache, upstream):
    _require_trace(cache, 'sum')
    return (np.full(cache, upstream, dtype=upstream.dtype),)


def dropout_mask(shape, p, rng, dtype=np.float64):
    """Inverted-dropout mask: kept entries scaled by 1/(1-p), dropped entries zero."""

    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / (1.0 - p)


def dropout_forward(x, mask):
    if mask.shape != x.shape:
        raise ShapeError('mask', x.shape, mask.shape, op='dropout')
    return x * mask, mask


def dropout_backward(cache, upstream):
    _require_trace(cache, 'dropout')
    return (upstream * cache,)


# Pooling and normalization

def _require_even(x, op):
    _require_rank(x, 4, op)
    if x.shape[2] % 2:
        raise ShapeError('H', 'even', x.shape[2], op=op)
    if x.shape[3] % 2:
        raise ShapeError('W', 'even', x.shape[3], op=op)


def _windows_2x2(x):
    B, C, H, W = x.shape
    return x.reshape(B, C, H // 2, 2, W // 2, 2)


def rms_pool_forward(x, kernel=2, stride=2):
    """Root-mean-square pooling over non-overlapping 2x2 windows."""

    if kernel != 2 or stride != 2:
        raise ShapeError('kernel', 2, kernel, op='rms_pool')
    _require_even(x, 'rms_pool')
    windows = _windows_2x2(x)
    out = np.sqrt(np.mean(windows * windows, axis=(3, 5)))
    return out, (x, out)


def rms_pool_backward(cache, upstream):
    _require_trace(cache, 'rms_pool')
    x, out = cache
    scale = upstream / (4.0 * np.maximum(out, POOL_EPS))
    grad = _windows_2x2(x) * scale[:, :, :, None, :, None]
    return (grad.reshape(x.shape),)


def avg_pool_2x2_forward(x):
    _require_even(x, 'avg_pool_2x2')
    return _windows_2x2(x).mean(axis=(3, 5)), x.shape


def avg_pool_2x2_backward(cache, upstream):
    _require_trace(cache, 'avg_pool_2x2')
    B, C, H, W = cache
    grad = np.broadcast_to((upstream / 4.0)[:, :, :, None, :, None], (B, C, H // 2, 2, W // 2, 2))
    return (grad.reshape(cache).copy(),)


def global_avg_pool_forward(x):
    _require_rank(x, 4, 'global_avg_pool')
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(cache, upstream):
    _require_trace(cache, 'global_avg_pool')
    B, C, H, W = cache
    grad = np.broadcast_to(upstream[:, :, None, None] / (H * W), cache)
    return (grad.copy(),)


def rms_norm_forward(x, eps=RMSNORM_EPS):
    """Per-sample x / (sqrt(mean(x^2)) + eps), the mean taken over every non-batch axis; no affine terms."""

    axes = tuple(range(1, x.ndim))
    rms = np.sqrt(np.mean(x * x, axis=axes, keepdims=True))
    scale = 1.0 / (rms + eps)
    return x * scale, (x, rms, scale)


def rms_norm_backward(cache, upstream):
    _require_trace(cache, 'rms_norm')
    x, rms, scale = cache
    axes = tuple(range(1, x.ndim))
    count = int(np.prod(x.shape[1:]))
    safe_rms = np.where(rms > 0, rms, 1.0)
    dot = np.sum(upstream * x, axis=axes, keepdims=True)
    grad = upstream * scale - x * (dot * scale * scale / (count * safe_rms))
    return (grad,)


def batch_norm_forward(x, running_mean, running_var, training, momentum=BATCHNORM_MOMENTUM, eps=BATCHNORM_EPS):
    """
    Affine-free batch normalization over (batch, height, width) per channel.

    Returns:
        tuple: ``(output, cache, running_mean, running_var)`` with the running statistics updated in train mode
        (unbiased variance, PyTorch convention) and returned unchanged in eval mode.
    """

    _require_rank(x, 4, 'batch_norm')
    if running_mean.shape != (x.shape[1],):
        raise ShapeError('C', running_mean.shape[0], x.shape[1], op='batch_norm')
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * n / max(n - 1, 1)
        running_mean = (1.0 - momentum) * running_mean + momentum * mean
        running_var = (1.0 - momentum) * running_var + momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    return xhat, (xhat, inv_std, training), running_mean, running_var


def batch_norm_backward(cache, upstream):
    _require_trace(cache, 'batch_norm')
    xhat, inv_std, training = cache
    inv = inv_std[None, :, None, None]
    if not training:
        return (upstream * inv,)
    n = upstream.shape[0] * upstream.shape[2] * upstream.shape[3]
    sum_g = upstream.sum(axis=(0, 2, 3), keepdims=True)
    sum_gx = (upstream * xhat).sum(axis=(0, 2, 3), keepdims=True)
    return (inv * (upstream - sum_g / n - xhat * sum_gx / n),)


# Spatial regions

def region_partition(H, W, s):
    """
    Split an H x W grid into s*s non-overlapping regions.

    Region (i, j) spans rows floor(i*H/s) .. floor((i+1)*H/s) and columns floor(j*W/s) .. floor((j+1)*W/s),
    listed row-major in (i, j).

    Returns:
        list[tuple[slice, slice]]: ``s*s`` (row slice, column slice) pairs tiling the grid exactly.
    """

    if s < 1 or s > min(H, W):
        raise ShapeError('scale', f"1..{min(H, W)}", s, op='region_partition')
    rows = [(i * H) // s for i in range(s + 1)]
    cols = [(j * W) // s for j in range(s + 1)]
    return [(slice(rows[i], rows[i + 1]), slice(cols[j], cols[j + 1])) for i in range(s) for j in range(s)]


def region_mean_forward(x, s):
    """
    Mean over each of the s*s regions, per sample and channel, flattened channel-major then (i, j).

    Sums accumulate in float64 whatever the storage dtype.
    """

    _require_rank(x, 4, 'region_mean')
    B, C, H, W = x.shape
    regions = region_partition(H, W, s)
    out = np.empty((B, C, s * s), dtype=np.float64)
    for k, (rows, cols) in enumerate(regions):
        out[:, :, k] = x[:, :, rows, cols].mean(axis=(2, 3), dtype=np.float64)
    return out.reshape(B, C * s * s).astype(x.dtype, copy=False), (x.shape, regions)


def region_mean_backward(cache, upstream):
    _require_trace(cache, 'region_mean')
    shape, regions = cache
    B, C = shape[:2]
    per_region = upstream.reshape(B, C, len(regions))
    grad = np.zeros(shape, dtype=upstream.dtype)
    for k, (rows, cols) in enumerate(regions):
        area = (rows.stop - rows.start) * (cols.stop - cols.start)
        grad[:, :, rows, cols] = (per_region[:, :, k] / area)[:, :, None, None]
    return (grad,)


def channel_mix_forward(x, weight):
    """1x1 projection: z[b, k] = sum_c weight[k, c] * x[b, c] at every spatial position."""

    _require_rank(x, 4, 'channel_mix')
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError('C', x.shape[1], weight.shape[-1], op='channel_mix')
    return np.einsum('kc,bchw->bkhw', weight, x, optimize=True), (x, weight)


def channel_mix_backward(cache, upstream):
    _require_trace(cache, 'channel_mix')
    x, weight = cache
    grad_x = np.einsum('kc,bkhw->bchw', weight, upstream, optimize=True)
    grad_w = np.einsum('bkhw,bchw->kc', upstream, x, optimize=True)
    return grad_x, grad_w


def concat_forward(*parts):
    sizes = [part.shape[1] for part in parts]
    return np.concatenate(parts, axis=1), sizes


def concat_backward(cache, upstream):
    _require_trace(cache, 'concat')
    bounds = np.cumsum(cache)[:-1]
    return tuple(np.split(upstream, bounds, axis=1))


def channel_shift_forward(h, delta):
    """Add a per-sample channel vector (B, C) at every spatial position of h (B, C, H, W)."""

    _require_rank(h, 4, 'channel_shift')
    if delta.shape != h.shape[:2]:
        raise ShapeError('C', h.shape[:2], delta.shape, op='channel_shift')
    return h + delta[:, :, None, None], True


def channel_shift_backward(cache, upstream):
    _require_trace(cache, 'channel_shift')
    return upstream, upstream.sum(axis=(2, 3))


# Dense heads

def linear_forward(x, weight, bias=None):
    """y = x W^T + b for x (B, in), W (out, in)."""

    _require_rank(x, 2, 'linear')
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError('in_features', weight.shape[-1], x.shape[1], op='linear')
    out = x @ weight.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError('out_features', weight.shape[0], bias.shape, op='linear')
        out = out + bias
    return out, (x, weight, bias is not None)


def linear_backward(cache, upstream):
    _require_trace(cache, 'linear')
    x, weight, has_bias = cache
    grad_x = upstream @ weight
    grad_w = upstream.T @ x
    if has_bias:
        return grad_x, grad_w, upstream.sum(axis=0)
    return grad_x, grad_w


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def cross_entropy_forward(logits, labels):
    """Mean softmax cross-entropy of logits (B, K) against integer labels (B,)."""

    _require_rank(logits, 2, 'cross_entropy')
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError('B', logits.shape[0], labels.shape, op='cross_entropy')
    K = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ShapeError('label', f"0..{K - 1}", int(labels.max()), op='cross_entropy')
    logp = log_softmax(logits)
    loss = -np.mean(logp[np.arange(labels.shape[0]), labels])
    return np.asarray(loss, dtype=logits.dtype), (np.exp(logp), labels)


def cross_entropy_backward(cache, upstream):
    _require_trace(cache, 'cross_entropy')
    probs, labels = cache
    grad = probs.copy()
    grad[np.arange(labels.shape[0]), labels] -= 1.0
    return (grad * (upstream / labels.shape[0]),)
