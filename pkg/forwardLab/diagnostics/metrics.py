"""
Per-layer behavior metrics over accuracy curves and fusion weights.

* Decline Area: cumulative drop below the peak after the peak layer.
* Tail Retention: mean accuracy of the last four layers over the peak accuracy.
* Shallow / Deep Gain: mean per-layer improvement of curve B over curve A on the front and back halves,
  split at ceil(L / 2).
* N_eff: participation ratio of the fusion weights.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from engine.exceptions import MetricError


TAIL_LAYERS = 4


@dataclass
class LayerCurve:
    """Per-layer top-1 percentages of one model on one split."""

    acc: list
    name: str = ''
    split: str = 'test'
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.acc = [float(a) for a in self.acc]
        if any(not 0.0 <= a <= 100.0 for a in self.acc):
            raise MetricError(f"curve {self.name!r}: accuracies must lie in 0..100")

    def __len__(self):
        return len(self.acc)

    def as_dict(self):
        return {'name': self.name, 'split': self.split, 'acc': list(self.acc), **self.meta}


def _values(curve):
    acc = curve.acc if isinstance(curve, LayerCurve) else list(curve)
    if not acc:
        raise MetricError("empty accuracy curve")
    return [float(a) for a in acc]


def peak_layer(curve):
    """Index of the highest accuracy; the first one on ties."""

    acc = _values(curve)
    return acc.index(max(acc))


def decline_area(curve):
    acc = _values(curve)
    peak = peak_layer(acc)
    return sum(max(0.0, acc[peak] - a) for a in acc[peak + 1:])


def tail_retention(curve):
    acc = _values(curve)
    if len(acc) < TAIL_LAYERS:
        raise MetricError(f"tail retention needs at least {TAIL_LAYERS} layers, got {len(acc)}")
    peak = acc[peak_layer(acc)]
    if peak <= 0.0:
        raise MetricError("tail retention is undefined for a zero peak")
    return (sum(acc[-TAIL_LAYERS:]) / TAIL_LAYERS) / peak


def split_index(num_layers):
    return math.ceil(num_layers / 2)


def shallow_deep_gain(curve_a, curve_b):
    """
    Mean improvement of B over A on the shallow and the deep half.

    Returns:
        tuple: ``(SG, DG)``.
    """

    a, b = _values(curve_a), _values(curve_b)
    if len(a) != len(b):
        raise MetricError(f"curves differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise MetricError("shallow/deep gain needs at least two layers")
    split = split_index(len(a))
    deltas = [y - x for x, y in zip(a, b)]
    return sum(deltas[:split]) / split, sum(deltas[split:]) / (len(a) - split)


def n_eff(weights):
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or not len(weights):
        raise MetricError("weights must be a non-empty vector")
    if np.any(weights < 0):
        raise MetricError("weights must be nonnegative")
    total = weights.sum()
    if total == 0.0:
        raise MetricError("weights are all zero")
    return float(total * total / np.sum(weights * weights))
