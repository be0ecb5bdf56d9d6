"""
A network built from an `ArchSpec` for one block size m.

Layers are split into gradient groups of m consecutive blocks. Each group owns its blocks, the goodness head at its
exit layer and, when it starts at a boundary, the feature alignment layer in front of it. Parameters are drawn
from the init stream in layer order, so a block's initial weights never depend on the blocks after it.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from engine import ops
from engine.blocks import BlockParams, FalParams, block_forward, detach, fal_forward
from engine.exceptions import CheckpointError
from engine.goodness import GoodnessHead, bicovg_encode
from engine.tensor import GradientGroup, Tensor4, no_trace, resolve_dtype


logger = logging.getLogger(__name__)


def fal_positions(arch, m):
    """First layers of the groups that receive a FAL in front of them."""

    if not arch.fal:
        return ()
    if m == 1:
        return tuple(arch.group_boundaries)
    return tuple(range(m, arch.num_layers, m))


def group_layers(num_layers, m):
    return [list(range(start, min(start + m, num_layers))) for start in range(0, num_layers, m)]


@dataclass
class GroupUnit:
    """One gradient group: its layers, exit layer, optional FAL and the `GradientGroup` holding the trace."""

    index: int
    layers: list
    group: GradientGroup
    fal: FalParams = None
    blocks: list = field(default_factory=list)

    @property
    def exit(self):
        return self.layers[-1]


@dataclass
class GroupOutput:
    h: Tensor4
    goodness: object
    loss: object


class Network:
    """
    Parameters and forward passes of a whole network at block size m.

    Args:
        arch (ArchSpec): Architecture.
        m (int): HGB block size.
        rng (numpy.random.Generator): Init stream.
        precision (str): Storage precision, ``float64`` or ``float32``.
        counter (ActivationCounter | None): Counter shared by every group.
    """

    def __init__(self, arch, m, rng, precision='float64', counter=None):
        self.arch = arch
        self.m = m
        self.dtype = resolve_dtype(precision)
        self.fal_layers = fal_positions(arch, m)
        self.units = []
        self.params = []
        self.heads = {}
        self.fals = {}

        layer_to_unit = {}
        for index, layers in enumerate(group_layers(arch.num_layers, m)):
            unit = GroupUnit(index, layers, GradientGroup(f"group{index}", counter=counter))
            self.units.append(unit)
            for layer in layers:
                layer_to_unit[layer] = unit

        for layer, spec in enumerate(arch.blocks):
            unit = layer_to_unit[layer]
            if layer in self.fal_layers and layer == unit.layers[0]:
                unit.fal = FalParams(unit.group, f"fal{layer}", spec.in_channels, rng, dtype=self.dtype)
                self.fals[layer] = unit.fal
            params = BlockParams(unit.group, f"layer{layer}", spec, rng, dtype=self.dtype)
            unit.blocks.append(params)
            self.params.append(params)
            if layer == unit.exit:
                self.heads[layer] = GoodnessHead(unit.group, f"layer{layer}.head", spec.out_channels,
                                                 arch.num_classes, spec.goodness, rng, dtype=self.dtype)

        logger.debug("Built %s: %s groups of up to %s layers, FAL before %s",
                     arch.name, len(self.units), m, list(self.fal_layers))

    @property
    def exits(self):
        return [unit.exit for unit in self.units]

    def named_parameters(self):
        named = {}
        for unit in self.units:
            named.update(unit.group.parameters)
        return named

    def named_buffers(self):
        buffers = {}
        for params in self.params:
            buffers.update(params.buffers())
        return buffers

    def load_buffers(self, buffers):
        """
        Copy stored batch-norm running statistics into the network.

        Raises:
            CheckpointError: If the stored buffer names differ from the network's.
        """

        differing = sorted(set(self.named_buffers()) ^ set(buffers))
        if differing:
            raise CheckpointError(f"buffer sets differ: {', '.join(differing[:5])}")
        for params in self.params:
            if params.bn is None:
                continue
            params.bn.running_mean = np.array(buffers[f"{params.prefix}.bn.running_mean"], dtype=self.dtype)
            params.bn.running_var = np.array(buffers[f"{params.prefix}.bn.running_var"], dtype=self.dtype)

    @property
    def parameter_bytes(self):
        return sum(param.nbytes for param in self.named_parameters().values())

    def prepare_input(self, images):
        """Cast a batch to the storage dtype and apply the stem; the result belongs to no group."""

        x = Tensor4(np.asarray(images, dtype=self.dtype))
        if self.arch.stem:
            with no_trace():
                x = ops.avg_pool_2x2(x)
        return x

    def forward_group(self, unit, h, labels=None, mode='train', dropout_rng=None):
        """
        Forward one group from a detached input.

        Returns:
            GroupOutput: the group's output ``h``, the exit `GoodnessVector` and, when labels are given,
            the exit cross-entropy loss.
        """

        h = detach(h)
        if unit.fal is not None:
            h = fal_forward(h, unit.fal)
        goodness = None
        for layer, params in zip(unit.layers, unit.blocks):
            f, h = block_forward(h, self.arch.blocks[layer], params, mode=mode, rng=dropout_rng)
            if layer == unit.exit:
                goodness = bicovg_encode(f, self.heads[layer], layer=layer)
        loss = ops.cross_entropy(goodness.logits, labels) if labels is not None else None
        return GroupOutput(h=h, goodness=goodness, loss=loss)

    def exit_logits(self, images):
        """Eval-mode logits of every exit for one batch, shaped (B, exits, K)."""

        with no_trace():
            h = self.prepare_input(images)
            stack = []
            for unit in self.units:
                out = self.forward_group(unit, h, mode='eval')
                stack.append(out.goodness.logits.data)
                h = out.h
        return np.stack(stack, axis=1)

    def predict_logits(self, images, batch_size=256):
        """Eval-mode logits of every exit for a whole array of images."""

        chunks = [self.exit_logits(images[start:start + batch_size])
                  for start in range(0, len(images), batch_size)]
        if not chunks:
            return np.zeros((0, len(self.units), self.arch.num_classes), dtype=self.dtype)
        return np.concatenate(chunks, axis=0)

    def release(self):
        for unit in self.units:
            unit.group.release()
