"""
Deterministic eval-mode evaluation of every exit layer, with Best Pred and Logistic Fusion predictions.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from diagnostics.metrics import LayerCurve
from engine.exceptions import CheckpointError, DatasetError
from training.config import arch_hash
from training.fusion import best_layer, fuse, layer_accuracies, top1

from .loader import eval_loader


logger = logging.getLogger(__name__)


@dataclass
class EvaluationResult:
    """Per-exit accuracies of one split plus the two inference modes."""

    layers: list
    per_layer_top1: list
    best_layer: int
    best_top1: float
    fused_top1: float = None
    split: str = 'test'
    fusion_weights: list = field(default_factory=list)

    @property
    def curve(self):
        return LayerCurve(self.per_layer_top1, split=self.split, meta={'layers': list(self.layers)})

    def as_rows(self):
        weights = self.fusion_weights or [None] * len(self.layers)
        return [
            {'layer': layer, 'w_l': w, 'top1': acc, 'fused_top1': self.fused_top1}
            for layer, w, acc in zip(self.layers, weights, self.per_layer_top1)
        ]


def check_compatible(arch, dataset):
    channels, height, width = dataset.shape
    if (channels, height) != (arch.input_channels, arch.input_size) or height != width:
        raise DatasetError(f"{dataset.name or dataset.split}: images are {channels}x{height}x{width}, "
                           f"{arch.name} expects {arch.input_channels}x{arch.input_size}x{arch.input_size}")
    if dataset.num_classes > arch.num_classes:
        raise DatasetError(f"{dataset.name or dataset.split}: {dataset.num_classes} classes, "
                           f"{arch.name} has {arch.num_classes} outputs")


def extract_logits(network, dataset, batch_size=256):
    """Eval-mode logits of every exit for a whole split, shaped (N, exits, K)."""

    check_compatible(network.arch, dataset)
    chunks = [network.exit_logits(images) for images, _ in eval_loader(dataset, batch_size, dtype=network.dtype)]
    if not chunks:
        return np.zeros((0, len(network.units), network.arch.num_classes), dtype=network.dtype)
    return np.concatenate(chunks, axis=0)


def evaluate(network, dataset, fusion=None, selection_top1=None, checkpoint_hash=None, batch_size=256,
             logit_stack=None):
    """
    Evaluate every exit of a network on one split.

    Args:
        network (Network): Trained network.
        dataset (Dataset): Split to evaluate.
        fusion (FusionHead | None): Trained fusion logits; without them ``fused_top1`` is ``None``.
        selection_top1 (list | None): Per-exit accuracies the Best Pred layer is chosen on (usually the train
            split); this split's own accuracies by default.
        checkpoint_hash (str | None): Architecture hash the weights were stored with.
        logit_stack (ndarray | None): Cached logits of this split, skipping the forward passes.

    Returns:
        EvaluationResult

    Raises:
        CheckpointError: If ``checkpoint_hash`` does not describe the network's architecture.
    """

    if checkpoint_hash is not None and checkpoint_hash != arch_hash(network.arch):
        raise CheckpointError(f"checkpoint hash {checkpoint_hash[:12]} does not match {network.arch.name}")
    stack = extract_logits(network, dataset, batch_size) if logit_stack is None else logit_stack
    per_layer = [float(acc) for acc in layer_accuracies(stack, dataset.labels)]
    chosen = best_layer(selection_top1 if selection_top1 is not None else per_layer)

    result = EvaluationResult(
        layers=list(network.exits),
        per_layer_top1=per_layer,
        best_layer=network.exits[chosen],
        best_top1=per_layer[chosen],
        split=dataset.split,
    )
    if fusion is not None:
        result.fused_top1 = top1(fuse(stack, fusion), dataset.labels)
        result.fusion_weights = [float(w) for w in fusion.weights]
    logger.info("Evaluated %s on %s: best layer %s %.2f%%, fused %s", network.arch.name, dataset.split,
                result.best_layer, result.best_top1,
                f"{result.fused_top1:.2f}%" if result.fused_top1 is not None else "n/a")
    return result
