"""
Bi-axis covariance goodness and the per-layer readout.

The goodness vector of a layer concatenates, for each active scale s in order, the per-channel spatial energies
``pcs(s)`` and the cross-channel energies ``cc(s)``: ``[pcs(s1) | cc(s1) | pcs(s2) | cc(s2)]``. Inside each
segment entries are ordered channel (or projection row) first, then region row i, then region column j. This order
is part of the checkpoint format and must not change.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .exceptions import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class GoodnessConfig:
    """
    Goodness settings for one block.

    Attributes:
        scales (tuple[int, int]): Region grid sizes (s1, s2) with s1 < s2.
        reduction_ratio (int): r in N = C / r cross-channel projections.
        include_cc (bool): Keep the cross-channel segments.
        include_multiscale (bool): Use both scales; when false only s1 is used.
    """

    scales: tuple = (1, 2)
    reduction_ratio: int = 8
    include_cc: bool = True
    include_multiscale: bool = True

    def __post_init__(self):
        s1, s2 = self.scales
        if not 1 <= s1 < s2:
            raise ConfigError(f"scales must satisfy 1 <= s1 < s2, got {self.scales}", path='scales')
        if self.reduction_ratio < 1:
            raise ConfigError(f"reduction_ratio must be positive, got {self.reduction_ratio}",
                              path='reduction_ratio')

    @property
    def active_scales(self):
        return tuple(self.scales) if self.include_multiscale else (self.scales[0],)

    @property
    def finest_scale(self):
        return max(self.active_scales)

    def projection_dim(self, channels):
        """N = C / r; refuses to round so checkpoints never drift in size."""

        if not self.include_cc:
            return 0
        if channels % self.reduction_ratio:
            raise ConfigError(f"reduction ratio {self.reduction_ratio} does not divide {channels} channels",
                              path='reduction_ratio')
        return channels // self.reduction_ratio

    def dim(self, channels):
        """Goodness dimension D = (C + N) * sum of s^2 over the active scales."""

        return (channels + self.projection_dim(channels)) * sum(s * s for s in self.active_scales)


@dataclass
class GoodnessVector:
    """Goodness values (B, D) and readout logits (B, K) of one layer."""

    values: Tensor
    logits: Tensor
    layer: int


class GoodnessHead:
    """
    Learnable parts of a layer's goodness objective: the cross-channel projection W_cc (N x C) and the readout
    W_l (K x D), b_l (K). All three are registered in the gradient group that trains the layer.
    """

    def __init__(self, group, prefix, channels, num_classes, config, rng, dtype=np.float64):
        self.prefix = prefix
        self.channels = channels
        self.num_classes = num_classes
        self.config = config
        self.projections = config.projection_dim(channels)
        self.dim = config.dim(channels)

        self.w_cc = None
        if self.projections:
            bound = 1.0 / np.sqrt(channels)
            self.w_cc = group.register(
                f"{prefix}.w_cc", rng.uniform(-bound, bound, (self.projections, channels)).astype(dtype))
        bound = 1.0 / np.sqrt(self.dim)
        self.weight = group.register(
            f"{prefix}.readout.weight", rng.uniform(-bound, bound, (num_classes, self.dim)).astype(dtype))
        self.bias = group.register(
            f"{prefix}.readout.bias", rng.uniform(-bound, bound, num_classes).astype(dtype))

    def parameters(self):
        params = [self.weight, self.bias]
        if self.w_cc is not None:
            params.insert(0, self.w_cc)
        return params


def pcs_goodness(f, s):
    """Per-channel spatial goodness: region means of squared activations, length C*s^2 per sample."""

    return ops.region_mean(ops.square(f), s)


def cc_goodness(f, w_cc, s):
    """Cross-channel goodness: region means of squared channel mixtures, length N*s^2 per sample."""

    if w_cc.ndim != 2 or w_cc.shape[1] != f.shape[1]:
        raise ShapeError('C', f.shape[1], w_cc.shape[-1], op='cc_goodness')
    return ops.region_mean(ops.square(ops.channel_mix(f, w_cc)), s)


def bicovg_values(f, head, config=None):
    """Concatenate the goodness segments for every active scale."""

    config = config or head.config
    if f.shape[1] != head.channels:
        raise ShapeError('C', head.channels, f.shape[1], op='bicovg_encode')
    parts = []
    for s in config.active_scales:
        parts.append(pcs_goodness(f, s))
        if config.include_cc:
            parts.append(cc_goodness(f, head.w_cc, s))
    return parts[0] if len(parts) == 1 else ops.concat(parts)


def readout(g, head):
    """Class logits W_l g + b_l."""

    values = g.values if isinstance(g, GoodnessVector) else g
    if values.ndim != 2 or values.shape[1] != head.dim:
        raise ShapeError('D', head.dim, values.shape[-1], op='readout')
    return ops.linear(values, head.weight, head.bias)


def bicovg_encode(f, head, config=None, layer=0):
    """
    Goodness vector and logits of a layer from its post-ReLU, pre-pool activation ``f``.

    Returns:
        GoodnessVector: values of length ``head.dim`` and ``head.num_classes`` logits per sample.
    """

    values = bicovg_values(f, head, config)
    return GoodnessVector(values=values, logits=readout(values, head), layer=layer)
