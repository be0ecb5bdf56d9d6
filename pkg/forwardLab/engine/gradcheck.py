"""
Central finite differences for checking analytic gradients.
"""

import numpy as np


def numerical_gradient(fn, x, h=1e-5):
    """
    Estimate d fn(x) / dx by central differences.

    Args:
        fn (callable): Maps an array shaped like ``x`` to a scalar.
        x (ndarray): Point of evaluation; never modified.
        h (float): Step size.

    Returns:
        ndarray: Gradient estimate with the shape of ``x``.
    """

    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=['multi_index'])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + h
        plus = float(fn(x.copy()))
        x[idx] = original - h
        minus = float(fn(x.copy()))
        x[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """Largest absolute difference scaled by the largest magnitude of either gradient."""

    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)
