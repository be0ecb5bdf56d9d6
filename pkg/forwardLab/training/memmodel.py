"""
Analytic peak-memory model and its measured counterpart.

Residency rules (one training step, engine tensor bytes only):

=====================  ======================================================================================
traced output          every op output recorded while a group runs forward, including the pool, dropout and
                       norm outputs of an exit block that no loss depends on
gradient array         one per traced output on the path to the group's loss, plus the loss seed
group trace            resident from the group's forward until its backward finishes
``greedy`` schedule    all groups forwarded first; group k's backward runs while groups 0..k-1 still hold
                       their traces, so peak = max_k (sum_{j<=k} trace_j + grad_k)
``interleaved``        one group at a time, so peak = max_g (trace_g + grad_g)
untraced               ops whose inputs all lie outside the group, such as the pooled FAL input
static                 parameters, optimizer buffers, batch-norm buffers, and gradient accumulators (same size
                       as the parameters) from the first backward pass on
=====================  ======================================================================================

`residency_table` lists the tensors of each group in the order the engine records them; the estimate and the
tests share it.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from engine.blocks import FAL_HIDDEN
from engine.tensor import resolve_dtype

from .network import fal_positions, group_layers
from .optim import optimizer_buffer_count


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResidentTensor:
    op: str
    layer: int
    numel: int
    on_path: bool
    head: bool = False


@dataclass
class GroupFootprint:
    index: int
    layers: list
    tensors: list = field(default_factory=list)

    @property
    def trace_numel(self):
        return sum(t.numel for t in self.tensors)

    @property
    def grad_numel(self):
        return sum(t.numel for t in self.tensors if t.on_path)

    @property
    def head_numel(self):
        return sum(t.numel for t in self.tensors if t.head)


@dataclass
class MemoryEstimate:
    """Byte counts of one training step's peak."""

    execution: str
    m: int
    batch: int
    scalar_bytes: int
    parameter_bytes: int
    buffer_bytes: int
    gradient_bytes: int
    optimizer_bytes: int
    activation_bytes: int
    head_bytes: int
    peak_bytes: int
    groups: list

    @property
    def static_bytes(self):
        return self.parameter_bytes + self.buffer_bytes + self.gradient_bytes + self.optimizer_bytes

    def as_row(self):
        return {
            'm': self.m,
            'execution': self.execution,
            'batch': self.batch,
            'parameter_bytes': self.parameter_bytes,
            'optimizer_bytes': self.optimizer_bytes,
            'activation_bytes': self.activation_bytes,
            'head_bytes': self.head_bytes,
            'peak_bytes': self.peak_bytes,
        }


def _head_tensors(spec, layer, batch, size, num_classes):
    goodness = spec.goodness
    C = spec.out_channels
    N = goodness.projection_dim(C)
    tensors, parts = [], 0
    for s in goodness.active_scales:
        tensors.append(ResidentTensor('square', layer, batch * C * size * size, True, True))
        tensors.append(ResidentTensor('region_mean', layer, batch * C * s * s, True, True))
        parts += 1
        if N:
            tensors.append(ResidentTensor('channel_mix', layer, batch * N * size * size, True, True))
            tensors.append(ResidentTensor('square', layer, batch * N * size * size, True, True))
            tensors.append(ResidentTensor('region_mean', layer, batch * N * s * s, True, True))
            parts += 1
    if parts > 1:
        tensors.append(ResidentTensor('concat', layer, batch * goodness.dim(C), True, True))
    tensors.append(ResidentTensor('linear', layer, batch * num_classes, True, True))
    tensors.append(ResidentTensor('cross_entropy', layer, 1, True, True))
    return tensors


def residency_table(arch, m, batch, training=True):
    """
    Traced tensors of every group for one step, in recording order.

    Returns:
        list[GroupFootprint]
    """

    sizes = arch.spatial_sizes()
    fals = fal_positions(arch, m)
    footprints = []
    for index, layers in enumerate(group_layers(arch.num_layers, m)):
        footprint = GroupFootprint(index, layers)
        tensors = footprint.tensors
        exit_layer = layers[-1]
        if layers[0] in fals:
            first = arch.blocks[layers[0]]
            C, S = first.in_channels, sizes[layers[0]]
            tensors += [
                ResidentTensor('linear', layers[0], batch * FAL_HIDDEN, True),
                ResidentTensor('relu', layers[0], batch * FAL_HIDDEN, True),
                ResidentTensor('linear', layers[0], batch * C, True),
                ResidentTensor('channel_shift', layers[0], batch * C * S * S, True),
            ]
        for layer in layers:
            spec = arch.blocks[layer]
            C, S = spec.out_channels, sizes[layer]
            forwarded = layer != exit_layer
            tensors.append(ResidentTensor('conv2d', layer, batch * C * S * S, True))
            if spec.norm == 'batchnorm':
                tensors.append(ResidentTensor('batch_norm', layer, batch * C * S * S, True))
            tensors.append(ResidentTensor('relu', layer, batch * C * S * S, True))
            out = S // 2 if spec.has_pool else S
            if spec.has_pool:
                tensors.append(ResidentTensor('rms_pool', layer, batch * C * out * out, forwarded))
            if training and spec.dropout_p > 0.0:
                tensors.append(ResidentTensor('dropout', layer, batch * C * out * out, forwarded))
            if spec.norm == 'rmsnorm':
                tensors.append(ResidentTensor('rms_norm', layer, batch * C * out * out, forwarded))
            if not forwarded:
                tensors += _head_tensors(spec, layer, batch, S, arch.num_classes)
        footprints.append(footprint)
    return footprints


def parameter_count(arch, m):
    """Learnable scalars of the network built at block size m (blocks, heads at exits, FALs)."""

    total = 0
    exits = {layers[-1] for layers in group_layers(arch.num_layers, m)}
    for layer in fal_positions(arch, m):
        total += 2 * FAL_HIDDEN * arch.blocks[layer].in_channels
    for layer, spec in enumerate(arch.blocks):
        total += spec.out_channels * spec.in_channels * 9 + spec.out_channels
        if layer in exits:
            C = spec.out_channels
            D = spec.goodness.dim(C)
            total += spec.goodness.projection_dim(C) * C + arch.num_classes * D + arch.num_classes
    return total


def buffer_count(arch):
    return sum(2 * spec.out_channels for spec in arch.blocks if spec.norm == 'batchnorm')


def peak_activation_numel(footprints, execution):
    """Peak resident traced elements for a schedule."""

    if execution == 'interleaved':
        return max(f.trace_numel + f.grad_numel for f in footprints)
    peak, resident = 0, 0
    for footprint in footprints:
        resident += footprint.trace_numel
        peak = max(peak, resident + footprint.grad_numel)
    return peak


def estimate_peak(arch, plan, batch=None, scalar_bytes=None, m=None, execution=None):
    """
    Closed-form peak bytes of one training step.

    Args:
        arch (ArchSpec): Architecture.
        plan (TrainPlan): Supplies m, execution, optimizer and precision unless overridden.
        batch (int | None): Batch size; the plan's by default.
        scalar_bytes (int | None): Bytes per scalar; from the plan's precision by default.

    Returns:
        MemoryEstimate
    """

    m = plan.hgb_m if m is None else m
    execution = plan.execution if execution is None else execution
    batch = plan.batch_size if batch is None else batch
    if scalar_bytes is None:
        scalar_bytes = np.dtype(resolve_dtype(plan.precision)).itemsize

    footprints = residency_table(arch, m, batch)
    parameter_bytes = parameter_count(arch, m) * scalar_bytes
    buffer_bytes = buffer_count(arch) * scalar_bytes
    optimizer_bytes = optimizer_buffer_count(plan.optimizer) * parameter_bytes
    activation_bytes = peak_activation_numel(footprints, execution) * scalar_bytes
    head_bytes = sum(f.head_numel for f in footprints) * scalar_bytes
    peak = parameter_bytes + buffer_bytes + parameter_bytes + optimizer_bytes + activation_bytes
    return MemoryEstimate(
        execution=execution, m=m, batch=batch, scalar_bytes=scalar_bytes,
        parameter_bytes=parameter_bytes, buffer_bytes=buffer_bytes, gradient_bytes=parameter_bytes,
        optimizer_bytes=optimizer_bytes, activation_bytes=activation_bytes, head_bytes=head_bytes,
        peak_bytes=peak, groups=footprints,
    )


def sweep(arch, plan, ms, batch=None, executions=None):
    """Estimates for several block sizes (and, optionally, both schedules)."""

    executions = executions or (plan.execution,)
    estimates = []
    for execution in executions:
        for m in ms:
            if not 1 <= m <= arch.num_layers:
                logger.warning("Skipping m=%s outside 1..%s", m, arch.num_layers)
                continue
            estimates.append(estimate_peak(arch, plan, batch=batch, m=m, execution=execution))
    return estimates


def estimates_csv(estimates):
    buffer = io.StringIO()
    fields = list(estimates[0].as_row()) if estimates else ['m']
    writer = csv.DictWriter(buffer, fieldnames=fields)
    writer.writeheader()
    for estimate in estimates:
        writer.writerow(estimate.as_row())
    return buffer.getvalue()


def measure_peak(state):
    """
    Observed peak bytes of a run: parameters, batch-norm buffers and optimizer buffers, the gradient
    accumulators once a backward pass has written them, plus the counter's high-water mark of traced bytes.

    A run that has not stepped yet measures parameter, buffer and optimizer bytes only.

    Raises:
        CounterError: If the run's allocation counter is disabled.
    """

    network = state.network
    high_water = state.counter.high_water_mark()
    buffers = sum(np.asarray(buffer).nbytes for buffer in network.named_buffers().values())
    gradients = network.parameter_bytes if state.cycles else 0
    return network.parameter_bytes + gradients + buffers + state.optimizer_bytes + high_water
