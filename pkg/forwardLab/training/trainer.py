"""
Local training: greedy layer-wise, hybrid goodness blocks and the interleaved schedule.

A training step trains every gradient group on its own exit loss. Two schedules are available and give
bit-identical updates:

* ``greedy`` forwards every group first, keeping all traces resident, then runs backward and the optimizer step
  group by group from the last to the first;
* ``interleaved`` runs forward, backward, step and release for one group before the next group's forward, so at
  most one group's trace is resident.

The summed monitoring loss is reported but never differentiated.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from engine.exceptions import NonFiniteLossError, TraceError
from engine.tensor import ActivationCounter

from .network import Network
from .optim import build_optimizer, scheduled_lr


logger = logging.getLogger(__name__)

CSV_FIELDS = ['epoch', 'layer', 'loss', 'top1']
DUMP_NAME = 'nonfinite-dump.json'


def make_rngs(seed):
    """Independent generators for data order, dropout, parameter init and augmentation."""

    data, dropout, init, augment = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))
    return {'data': data, 'dropout': dropout, 'init': init, 'augment': augment}


@dataclass
class LayerMeter:
    """Running sums for one exit layer within an epoch."""

    loss_sum: float = 0.0
    correct: int = 0
    count: int = 0

    def update(self, loss, logits, labels):
        batch = len(labels)
        self.loss_sum += loss * batch
        self.correct += int(np.sum(np.argmax(logits, axis=1) == labels))
        self.count += batch

    @property
    def loss(self):
        return self.loss_sum / self.count if self.count else float('nan')

    @property
    def top1(self):
        return 100.0 * self.correct / self.count if self.count else 0.0


@dataclass
class TrainState:
    """
    Everything a training run mutates: the network, one optimizer per group, counters, RNG streams and the
    per-layer meters of the current epoch.
    """

    arch: object
    plan: object
    network: Network
    optimizers: list
    rngs: dict
    counter: ActivationCounter
    epoch: int = 0
    step: int = 0
    batch_index: int = 0
    dump_dir: Path = None
    meters: dict = field(default_factory=dict)
    cycles: int = 0

    @property
    def m(self):
        return self.network.m

    @property
    def optimizer_bytes(self):
        return sum(optimizer.nbytes for optimizer in self.optimizers)

    def reset_meters(self):
        self.meters = {layer: LayerMeter() for layer in self.network.exits}


def build_state(arch, plan, dump_dir=None, counter=None):
    """Initialise a network and its optimizers from the plan's seed."""

    counter = counter if counter is not None else ActivationCounter()
    rngs = make_rngs(plan.seed)
    network = Network(arch, plan.hgb_m, rngs['init'], precision=plan.precision, counter=counter)
    lr = scheduled_lr(plan, 0)
    optimizers = [
        build_optimizer(plan.optimizer, list(unit.group.parameters.values()), grad_clip=plan.grad_clip, lr=lr)
        for unit in network.units
    ]
    state = TrainState(arch=arch, plan=plan, network=network, optimizers=optimizers, rngs=rngs,
                       counter=counter, dump_dir=Path(dump_dir) if dump_dir else None)
    state.reset_meters()
    return state


def set_epoch_lr(state, epoch):
    lr = scheduled_lr(state.plan, epoch)
    for optimizer in state.optimizers:
        optimizer.lr = lr
    return lr


def _check_finite(state, unit, loss, losses):
    value = float(loss.data)
    if np.isfinite(value):
        return value
    state.network.release()
    dump = {
        'layer': unit.exit,
        'group': unit.index,
        'batch_index': state.batch_index,
        'epoch': state.epoch,
        'step': state.step,
        'value': repr(value),
        'losses': {str(layer): loss_value for layer, loss_value in losses.items()},
        'lr': state.optimizers[unit.index].lr,
    }
    logger.error("Non-finite loss at layer %s, batch %s: %s", unit.exit, state.batch_index, dump)
    if state.dump_dir is not None:
        state.dump_dir.mkdir(parents=True, exist_ok=True)
        (state.dump_dir / DUMP_NAME).write_text(json.dumps(dump, indent=2), encoding='utf-8')
    raise NonFiniteLossError(unit.exit, state.batch_index, value)


def _update(state, unit, loss):
    unit.group.backward(loss)
    optimizer = state.optimizers[unit.index]
    optimizer.step()
    optimizer.zero_grad()
    state.cycles += 1


def _finish_step(state, outputs, labels):
    losses = {}
    for unit, out in outputs:
        value = float(out.loss.data)
        losses[unit.exit] = value
        state.meters[unit.exit].update(value, out.goodness.logits.data, labels)
    state.step += 1
    logger.debug("step %s losses %s (monitoring total %.4f)", state.step, losses, sum(losses.values()))
    return losses


def _standard_step(state, images, labels):
    labels = np.asarray(labels)
    network = state.network
    h = network.prepare_input(images)
    outputs, losses = [], {}
    for unit in network.units:
        out = network.forward_group(unit, h, labels, mode='train', dropout_rng=state.rngs['dropout'])
        losses[unit.exit] = _check_finite(state, unit, out.loss, losses)
        outputs.append((unit, out))
        h = out.h
    for unit, out in reversed(outputs):
        _update(state, unit, out.loss)
    return _finish_step(state, outputs, labels)


def train_step_greedy(state, images, labels):
    """
    One strictly layer-wise step (m = 1): every block trained by its own loss on a detached input.

    Returns:
        dict[int, float]: Loss per layer.
    """

    if state.m != 1:
        raise ValueError(f"greedy steps need m = 1, the network was built for m = {state.m}")
    return _standard_step(state, images, labels)


def train_step_hgb(state, images, labels, m=None):
    """
    One hybrid goodness block step: each group of m layers is trained end-to-end on its exit loss.

    Returns:
        dict[int, float]: Loss per group exit layer.
    """

    if m is not None and m != state.m:
        raise ValueError(f"the network was built for m = {state.m}, not {m}")
    return _standard_step(state, images, labels)


def train_step_interleaved(state, images, labels):
    """
    One step with forward, backward, step and release per group before the next group runs.

    Returns:
        dict[int, float]: Loss per group exit layer.
    """

    labels = np.asarray(labels)
    network = state.network
    h = network.prepare_input(images)
    outputs, losses = [], {}
    for unit in network.units:
        out = network.forward_group(unit, h, labels, mode='train', dropout_rng=state.rngs['dropout'])
        losses[unit.exit] = _check_finite(state, unit, out.loss, losses)
        _update(state, unit, out.loss)
        if unit.group.trace:
            raise TraceError(f"{unit.group.name} kept its trace after the update")
        outputs.append((unit, out))
        h = out.h
    return _finish_step(state, outputs, labels)


def train_step(state, images, labels):
    """Dispatch on the plan's execution mode."""

    if state.plan.execution == 'interleaved':
        return train_step_interleaved(state, images, labels)
    return _standard_step(state, images, labels)


def epoch_rows(state):
    """CSV rows (epoch, layer, loss, top1) of the running train meters."""

    return [
        {'epoch': state.epoch, 'layer': layer, 'loss': meter.loss, 'top1': meter.top1}
        for layer, meter in sorted(state.meters.items())
    ]


class MetricsWriter:
    """Appends per-epoch per-layer rows to ``metrics.csv``."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open('w', newline='', encoding='utf-8') as handle:
            csv.DictWriter(handle, fieldnames=CSV_FIELDS).writeheader()

    def write(self, rows):
        with self.path.open('a', newline='', encoding='utf-8') as handle:
            writer = csv.DictWriter(handle, fieldnames=CSV_FIELDS)
            for row in rows:
                writer.writerow({**row, 'loss': f"{row['loss']:.6f}", 'top1': f"{row['top1']:.4f}"})


def train_epoch(state, batches):
    """
    Run one epoch over an iterable of ``(images, labels)`` batches.

    Returns:
        list[dict]: The epoch's per-layer rows.
    """

    lr = set_epoch_lr(state, state.epoch)
    state.reset_meters()
    for index, (images, labels) in enumerate(batches):
        state.batch_index = index
        train_step(state, images, labels)
    rows = epoch_rows(state)
    logger.info("Epoch %s (lr %.3g): %s", state.epoch, lr,
                ", ".join(f"L{row['layer']} {row['loss']:.3f}/{row['top1']:.1f}%" for row in rows))
    state.epoch += 1
    return rows


def fit(state, loader, epochs=None, on_epoch_end=None, writer=None):
    """
    Train for ``epochs`` epochs (the plan's count by default).

    Args:
        state (TrainState): Training state, resumed from its ``epoch``.
        loader: Object whose ``epoch_batches(epoch)`` yields ``(images, labels)`` batches.
        on_epoch_end (callable | None): Called with ``(state, rows)`` after every epoch.
        writer (MetricsWriter | None): Receives every epoch's rows.
    """

    epochs = state.plan.epochs if epochs is None else epochs
    while state.epoch < epochs:
        rows = train_epoch(state, loader.epoch_batches(state.epoch))
        if writer is not None:
            writer.write(rows)
        if on_epoch_end is not None:
            on_epoch_end(state, rows)
    return state
