"""
Convolutional blocks, the feature alignment layer (FAL) and detach semantics.

A block computes ``f = ReLU(Conv(h_prev))`` (``Conv -> BN -> ReLU`` with batch norm) and forwards
``h = Norm(Dropout(Pool(f)))``. ``f`` feeds the goodness head; ``h`` feeds the next block.
"""

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from . import ops
from .exceptions import ConfigError, ShapeError
from .goodness import GoodnessConfig
from .tensor import detach

__all__ = ['BlockSpec', 'BlockParams', 'FalParams', 'block_forward', 'fal_forward', 'detach',
           'FAL_HIDDEN', 'NORMS']


FAL_HIDDEN = 512
NORMS = ('rmsnorm', 'batchnorm')
MODES = ('train', 'eval')


@dataclass(frozen=True)
class BlockSpec:
    """
    One row of an architecture table.

    Attributes:
        in_channels (int): Channels consumed.
        out_channels (int): Channels produced.
        has_pool (bool): Apply 2x2 stride-2 RMS pooling after the activation.
        dropout_p (float): Inverted-dropout probability applied in train mode.
        norm (str): ``"rmsnorm"`` (after dropout) or ``"batchnorm"`` (between conv and ReLU).
        goodness (GoodnessConfig): Goodness settings of the block's head.
    """

    in_channels: int
    out_channels: int
    has_pool: bool = False
    dropout_p: float = 0.1
    norm: str = 'rmsnorm'
    goodness: GoodnessConfig = field(default_factory=GoodnessConfig)

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be positive, got {self.in_channels} -> {self.out_channels}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}", path='dropout_p')
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}, got {self.norm!r}", path='norm')

    def output_size(self, size):
        """Spatial size after this block for an input of ``size`` x ``size``."""

        return size // 2 if self.has_pool else size


class BlockParams:
    """Conv weights (C_out, C_in, 3, 3) and bias of one block, plus batch-norm buffers when used."""

    def __init__(self, group, prefix, spec, rng, dtype=np.float64):
        self.prefix = prefix
        bound = 1.0 / np.sqrt(spec.in_channels * 9)
        shape = (spec.out_channels, spec.in_channels, 3, 3)
        self.weight = group.register(f"{prefix}.conv.weight", rng.uniform(-bound, bound, shape).astype(dtype))
        self.bias = group.register(f"{prefix}.conv.bias",
                                   rng.uniform(-bound, bound, spec.out_channels).astype(dtype))
        self.bn = ops.BatchNormStats(spec.out_channels, dtype) if spec.norm == 'batchnorm' else None

    def parameters(self):
        return [self.weight, self.bias]

    def buffers(self):
        if self.bn is None:
            return {}
        return {f"{self.prefix}.bn.running_mean": self.bn.running_mean,
                f"{self.prefix}.bn.running_var": self.bn.running_var}


class FalParams:
    """
    Feature alignment layer in front of a gradient group: ``delta = W2 ReLU(W1 GAP(h))``.

    W2 starts at zero so a fresh FAL is the identity. Both matrices belong to the group that consumes the
    corrected tensor.
    """

    def __init__(self, group, prefix, channels, rng, hidden=FAL_HIDDEN, dtype=np.float64):
        self.prefix = prefix
        self.channels = channels
        bound = 1.0 / np.sqrt(channels)
        self.w1 = group.register(f"{prefix}.w1", rng.uniform(-bound, bound, (hidden, channels)).astype(dtype))
        self.w2 = group.register(f"{prefix}.w2", np.zeros((channels, hidden), dtype=dtype))

    def parameters(self):
        return [self.w1, self.w2]


def block_forward(h_prev, spec, params, mode='train', mask=None, rng=None):
    """
    Run one block.

    Args:
        h_prev (Tensor4): Input activations with ``spec.in_channels`` channels.
        spec (BlockSpec): Block definition.
        params (BlockParams): Weights of the block.
        mode (str): ``"train"`` or ``"eval"``; dropout and batch statistics only act in train mode.
        mask (ndarray | None): Frozen dropout mask shaped like the pooled activations.
        rng (numpy.random.Generator | None): Source for a fresh mask when ``mask`` is not given.

    Returns:
        tuple: ``(f, h)``, the goodness input and the forwarded output.
    """

    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if h_prev.ndim != 4:
        raise ShapeError('rank', 4, h_prev.ndim, op='block_forward')
    if h_prev.shape[1] != spec.in_channels:
        raise ShapeError('C_in', spec.in_channels, h_prev.shape[1], op='block_forward')

    training = mode == 'train'
    z = ops.conv2d(h_prev, params.weight, params.bias)
    if params.bn is not None:
        z = ops.batch_norm(z, params.bn, training)
    f = ops.relu(z)

    h = ops.rms_pool(f) if spec.has_pool else f
    if training and spec.dropout_p > 0.0:
        if mask is None:
            if rng is None:
                raise ValueError("train-mode dropout needs a frozen mask or an rng")
            mask = F.dropout_mask(h.shape, spec.dropout_p, rng, dtype=h.dtype)
        h = ops.dropout(h, mask)
    if spec.norm == 'rmsnorm':
        h = ops.rms_norm(h)
    return f, h


def fal_forward(h, fal):
    """Add the FAL correction, broadcast over every spatial position."""

    if h.ndim != 4 or h.shape[1] != fal.channels:
        raise ShapeError('C', fal.channels, h.shape[1] if h.ndim == 4 else h.shape, op='fal_forward')
    pooled = ops.global_avg_pool(h)
    hidden = ops.relu(ops.linear(pooled, fal.w1))
    delta = ops.linear(hidden, fal.w2)
    return ops.channel_shift(h, delta)
