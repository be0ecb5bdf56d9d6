"""
Traced ops: the kernels of `engine.functional` applied to `Tensor` objects.

An op's output joins the gradient group of its tracked inputs and the op is appended to that group's trace.
Inputs from two different groups are refused, which is what keeps local losses from leaking gradients across a
detach boundary. Inside `no_trace()` nothing is recorded.
"""

import numpy as np

from . import functional as F
from .exceptions import TraceError
from .tensor import Tensor, Tensor4, tracing_enabled


def _group_of(inputs, op):
    group = None
    for tensor in inputs:
        if tensor.group is None:
            continue
        if group is None:
            group = tensor.group
        elif tensor.group is not group:
            raise TraceError(f"{op}: inputs belong to gradient groups {group.name!r} and {tensor.group.name!r}")
    return group


def _apply(op, forward, backward, inputs, *args):
    out, cache = forward(*(tensor.data for tensor in inputs), *args)
    out = np.asarray(out)
    out.flags.writeable = False
    result = Tensor4(out) if out.ndim == 4 else Tensor(out)
    group = _group_of(inputs, op)
    if group is not None and tracing_enabled():
        result.group = group
        group.record(result, tuple(inputs), lambda upstream: backward(cache, upstream))
    return result


def conv2d(x, weight, bias):
    return _apply('conv2d', F.conv2d_forward, F.conv2d_backward, (x, weight, bias))


def relu(x):
    return _apply('relu', F.relu_forward, F.relu_backward, (x,))


def square(x):
    return _apply('square', F.square_forward, F.square_backward, (x,))


def total(x):
    return _apply('sum', F.sum_forward, F.sum_backward, (x,))


def dropout(x, mask):
    return _apply('dropout', F.dropout_forward, F.dropout_backward, (x,), mask)


def rms_pool(x):
    return _apply('rms_pool', F.rms_pool_forward, F.rms_pool_backward, (x,))


def avg_pool_2x2(x):
    return _apply('avg_pool_2x2', F.avg_pool_2x2_forward, F.avg_pool_2x2_backward, (x,))


def global_avg_pool(x):
    return _apply('global_avg_pool', F.global_avg_pool_forward, F.global_avg_pool_backward, (x,))


def rms_norm(x):
    return _apply('rms_norm', F.rms_norm_forward, F.rms_norm_backward, (x,))


def batch_norm(x, stats, training):
    """
    Affine-free batch norm; ``stats`` is a `BatchNormStats` whose running averages are updated in train mode.
    """

    def forward(data):
        out, cache, stats.running_mean, stats.running_var = F.batch_norm_forward(
            data, stats.running_mean, stats.running_var, training)
        return out, cache

    return _apply('batch_norm', forward, F.batch_norm_backward, (x,))


def region_mean(x, s):
    return _apply('region_mean', F.region_mean_forward, F.region_mean_backward, (x,), s)


def channel_mix(x, weight):
    return _apply('channel_mix', F.channel_mix_forward, F.channel_mix_backward, (x, weight))


def concat(parts):
    return _apply('concat', F.concat_forward, F.concat_backward, tuple(parts))


def channel_shift(h, delta):
    return _apply('channel_shift', F.channel_shift_forward, F.channel_shift_backward, (h, delta))


def linear(x, weight, bias=None):
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _apply('linear', F.linear_forward, F.linear_backward, inputs)


def cross_entropy(logits, labels):
    return _apply('cross_entropy', F.cross_entropy_forward, F.cross_entropy_backward, (logits,), labels)


class BatchNormStats:
    """Running mean and variance of one batch-norm layer (buffers, not parameters)."""

    __slots__ = ('running_mean', 'running_var')

    def __init__(self, channels, dtype=np.float64):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
