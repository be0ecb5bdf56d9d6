"""
Diagnostics reports for single curves and A/B curve pairs.
"""

import csv
import logging
from pathlib import Path

from engine.exceptions import MetricError

from .metrics import LayerCurve, decline_area, n_eff, peak_layer, shallow_deep_gain, tail_retention


logger = logging.getLogger(__name__)


def read_curve(path, split='test'):
    """
    Read a per-layer curve from a CSV file.

    Accepts either a ``layer,top1`` table or a training ``metrics.csv`` (``epoch,layer,loss,top1``, optionally
    with a ``split`` column), from which the last epoch of ``split`` is taken.
    """

    path = Path(path)
    try:
        with path.open(newline='', encoding='utf-8') as handle:
            rows = list(csv.DictReader(handle))
    except OSError as exc:
        raise MetricError(f"{path}: cannot read curve ({exc.strerror})") from None
    if not rows or 'layer' not in rows[0] or 'top1' not in rows[0]:
        raise MetricError(f"{path}: expected columns 'layer' and 'top1'")
    if 'split' in rows[0]:
        rows = [row for row in rows if row['split'] == split] or rows
    if 'epoch' in rows[0]:
        last = max(int(row['epoch']) for row in rows)
        rows = [row for row in rows if int(row['epoch']) == last]
    rows.sort(key=lambda row: int(row['layer']))
    try:
        acc = [float(row['top1']) for row in rows]
    except ValueError as exc:
        raise MetricError(f"{path}: {exc}") from None
    return LayerCurve(acc, name=path.stem, split=split, meta={'layers': [int(row['layer']) for row in rows]})


def curve_metrics(curve, weights=None):
    """DA, TR (when defined) and N_eff (when weights are given) of one curve."""

    metrics = {
        'peak_layer': peak_layer(curve),
        'peak_top1': max(curve.acc),
        'decline_area': decline_area(curve),
        'tail_retention': None,
        'n_eff': None,
    }
    try:
        metrics['tail_retention'] = tail_retention(curve)
    except MetricError as exc:
        logger.warning("Tail retention skipped for %s: %s", curve.name, exc)
    if weights is not None:
        metrics['n_eff'] = n_eff(weights)
    return metrics


def _delta(after, before):
    if after is None or before is None:
        return None
    return after - before


def compare_curves(curve_a, curve_b, weights_a=None, weights_b=None):
    """
    A/B comparison report.

    Returns:
        dict: Metrics of both curves plus SG, DG and the deltas of DA, TR and N_eff (B minus A).
    """

    metrics_a = curve_metrics(curve_a, weights_a)
    metrics_b = curve_metrics(curve_b, weights_b)
    sg, dg = shallow_deep_gain(curve_a, curve_b)
    report = {
        'a': {'name': curve_a.name, **metrics_a},
        'b': {'name': curve_b.name, **metrics_b},
        'shallow_gain': sg,
        'deep_gain': dg,
        'delta_decline_area': metrics_b['decline_area'] - metrics_a['decline_area'],
        'delta_tail_retention': _delta(metrics_b['tail_retention'], metrics_a['tail_retention']),
        'delta_n_eff': _delta(metrics_b['n_eff'], metrics_a['n_eff']),
    }
    logger.info("Diagnostics %s -> %s: SG %.3f, DG %.3f, dDA %.3f",
                curve_a.name, curve_b.name, sg, dg, report['delta_decline_area'])
    return report


def diagnose(curves, weights=None):
    """
    Report for one curve, or for an A/B pair when two curves are given.

    Args:
        curves (list[LayerCurve]): One or two curves.
        weights (list | None): Fusion weights per curve, aligned with ``curves``.
    """

    weights = list(weights or [None] * len(curves))
    if len(weights) != len(curves):
        raise MetricError(f"{len(weights)} weight vectors for {len(curves)} curves")
    if len(curves) == 1:
        return {'a': {'name': curves[0].name, **curve_metrics(curves[0], weights[0])}}
    if len(curves) != 2:
        raise MetricError(f"diagnose takes one or two curves, got {len(curves)}")
    return compare_curves(curves[0], curves[1], weights[0], weights[1])
