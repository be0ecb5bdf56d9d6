"""
Logistic fusion of frozen per-layer logits, and the best-single-layer baseline.

The fused prediction is ``sum_l w_l * logits_l`` with ``w = softmax(alpha)``. Only ``alpha`` is trained, full
batch, on logits extracted once in eval mode and cached.
"""

import logging
from dataclasses import dataclass

import numpy as np

from engine import functional as F
from engine.exceptions import ShapeError
from engine.tensor import GradientGroup

from .optim import Adam


logger = logging.getLogger(__name__)


@dataclass
class FusionHead:
    """L fusion logits ``alpha``; the layer weights are their softmax."""

    alpha: np.ndarray

    @classmethod
    def uniform(cls, num_layers):
        return cls(alpha=np.zeros(num_layers))

    @property
    def num_layers(self):
        return len(self.alpha)

    @property
    def weights(self):
        shifted = self.alpha - np.max(self.alpha)
        weights = np.exp(shifted)
        return weights / weights.sum()


def _check_stack(logit_stack, num_layers):
    logit_stack = np.asarray(logit_stack)
    if logit_stack.ndim != 3:
        raise ShapeError('rank', 3, logit_stack.ndim, op='fuse')
    if logit_stack.shape[1] != num_layers:
        raise ShapeError('L', num_layers, logit_stack.shape[1], op='fuse')
    return logit_stack


def fuse(logit_stack, head):
    """
    Weighted sum of per-layer logits.

    Args:
        logit_stack (ndarray): Logits shaped (B, L, K).
        head (FusionHead): Fusion weights for the L layers.

    Returns:
        ndarray: Fused logits (B, K).
    """

    logit_stack = _check_stack(logit_stack, head.num_layers)
    return np.einsum('l,blk->bk', head.weights, logit_stack)


def fusion_loss(logit_stack, labels, head):
    """Mean cross-entropy of the fused logits."""

    return float(F.cross_entropy_forward(fuse(logit_stack, head), np.asarray(labels))[0])


def fusion_gradient(logit_stack, labels, head):
    """d CE(fuse(stack)) / d alpha through the softmax weights."""

    weights = head.weights
    fused = np.einsum('l,blk->bk', weights, logit_stack)
    _, cache = F.cross_entropy_forward(fused, labels)
    (upstream,) = F.cross_entropy_backward(cache, np.asarray(1.0))
    grad_w = np.einsum('bk,blk->l', upstream, logit_stack)
    return weights * (grad_w - np.dot(weights, grad_w))


def train_fusion(logit_stack, labels, epochs=500, lr=0.01):
    """
    Fit the fusion logits with full-batch Adam on cached logits.

    Args:
        logit_stack (ndarray): Frozen eval-mode logits (B, L, K) of the training split.
        labels (ndarray): Class indices (B,).

    Returns:
        FusionHead: The trained head; it has exactly L parameters.
    """

    logit_stack = np.asarray(logit_stack, dtype=np.float64)
    labels = np.asarray(labels)
    head = FusionHead.uniform(logit_stack.shape[1])
    _check_stack(logit_stack, head.num_layers)

    group = GradientGroup('fusion')
    alpha = group.register('fusion.alpha', head.alpha)
    optimizer = Adam([alpha], lr)
    for _ in range(epochs):
        alpha.grad = fusion_gradient(logit_stack, labels, FusionHead(alpha.data))
        optimizer.step()
    head = FusionHead(alpha=np.array(alpha.data))
    logger.info("Fusion weights after %s epochs: %s (train CE %.4f)",
                epochs, np.round(head.weights, 4).tolist(), fusion_loss(logit_stack, labels, head))
    return head


def layer_accuracies(logit_stack, labels):
    """Top-1 percentage of every layer from a logit stack."""

    labels = np.asarray(labels)
    predictions = np.argmax(logit_stack, axis=2)
    return 100.0 * np.mean(predictions == labels[:, None], axis=0)


def best_layer(per_layer_acc):
    """Index of the most accurate layer; ties go to the deeper layer."""

    per_layer_acc = list(per_layer_acc)
    if not per_layer_acc:
        raise ValueError("no layer accuracies given")
    return max(range(len(per_layer_acc)), key=lambda index: (per_layer_acc[index], index))


def best_pred(per_layer_acc, logit_stack):
    """
    Predictions of the single most accurate layer.

    Returns:
        tuple: ``(layer index, predicted classes)``.
    """

    index = best_layer(per_layer_acc)
    return index, np.argmax(np.asarray(logit_stack)[:, index, :], axis=1)


def top1(logits, labels):
    return 100.0 * float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
