"""
Tests for the per-layer behavior metrics.
"""
import math

import numpy as np
from django.test import SimpleTestCase

from diagnostics.metrics import (
    LayerCurve, decline_area, n_eff, peak_layer, shallow_deep_gain, split_index, tail_retention
)
from engine.exceptions import MetricError


def decline_area_oracle(acc):
    peak = max(range(len(acc)), key=lambda index: (acc[index], -index))
    total = 0.0
    for value in acc[peak + 1:]:
        if value < acc[peak]:
            total += acc[peak] - value
    return total


class CurveMetricTest(SimpleTestCase):
    """Test DA and TR."""

    def test_peak_layer_first_on_ties(self):
        self.assertEqual(peak_layer([10.0, 30.0, 30.0, 5.0]), 1)

    def test_decline_area_by_hand(self):
        self.assertAlmostEqual(decline_area([20.0, 50.0, 40.0, 45.0, 30.0]), 10.0 + 5.0 + 20.0)
        self.assertEqual(decline_area([10.0, 20.0, 30.0]), 0.0)
        self.assertEqual(decline_area([42.0]), 0.0)

    def test_decline_area_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            acc = rng.uniform(0, 100, size=rng.integers(1, 17)).tolist()

            self.assertAlmostEqual(decline_area(acc), decline_area_oracle(acc), places=9)

    def test_tail_retention(self):
        acc = [30.0, 60.0, 50.0, 40.0, 45.0, 55.0]

        self.assertAlmostEqual(tail_retention(acc), (50.0 + 40.0 + 45.0 + 55.0) / 4 / 60.0)
        self.assertEqual(tail_retention([10.0, 20.0, 30.0, 40.0]), 25.0 / 40.0)
        self.assertEqual(tail_retention(LayerCurve([50.0] * 8)), 1.0)

    def test_tail_retention_undefined(self):
        with self.assertRaisesMessage(MetricError, 'at least 4 layers'):
            tail_retention([10.0, 20.0, 30.0])
        with self.assertRaisesMessage(MetricError, 'zero peak'):
            tail_retention([0.0] * 5)

    def test_empty_and_invalid_curves(self):
        with self.assertRaises(MetricError):
            decline_area([])
        with self.assertRaises(MetricError):
            LayerCurve([10.0, 101.0])
        with self.assertRaises(MetricError):
            LayerCurve([-1.0])


class GainTest(SimpleTestCase):
    """Test shallow and deep gains."""

    def test_split_index(self):
        self.assertEqual([split_index(n) for n in (2, 3, 4, 5, 16)], [1, 2, 2, 3, 8])

    def test_gains_by_hand(self):
        a = [10.0, 20.0, 30.0, 40.0, 50.0]
        b = [12.0, 23.0, 31.0, 35.0, 40.0]

        sg, dg = shallow_deep_gain(a, b)

        self.assertAlmostEqual(sg, (2.0 + 3.0 + 1.0) / 3)
        self.assertAlmostEqual(dg, (-5.0 - 10.0) / 2)

    def test_gains_are_antisymmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(0, 100, 16).tolist(), rng.uniform(0, 100, 16).tolist()

        sg, dg = shallow_deep_gain(a, b)
        sg_back, dg_back = shallow_deep_gain(b, a)

        self.assertAlmostEqual(sg, -sg_back)
        self.assertAlmostEqual(dg, -dg_back)
        self.assertEqual(shallow_deep_gain(a, a), (0.0, 0.0))

    def test_gain_errors(self):
        with self.assertRaisesMessage(MetricError, 'differ in length'):
            shallow_deep_gain([1.0, 2.0], [1.0, 2.0, 3.0])
        with self.assertRaises(MetricError):
            shallow_deep_gain([1.0], [2.0])


class EffectiveLayersTest(SimpleTestCase):
    """Test n_eff."""

    def test_endpoints(self):
        self.assertAlmostEqual(n_eff([0.25] * 4), 4.0)
        self.assertEqual(n_eff([0.0, 1.0, 0.0]), 1.0)

    def test_scale_invariant(self):
        weights = [0.1, 0.5, 0.2, 0.2]

        self.assertAlmostEqual(n_eff(weights), n_eff([7.0 * w for w in weights]))
        self.assertAlmostEqual(n_eff(weights), 1.0 / sum(w * w for w in weights))

    def test_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            weights = rng.dirichlet(np.ones(6))
            value = n_eff(weights)

            self.assertTrue(1.0 - 1e-12 <= value <= 6.0 + 1e-12)
            self.assertFalse(math.isnan(value))

    def test_invalid_weights(self):
        for weights in ([], [0.0, 0.0], [0.5, -0.1], [[0.5, 0.5]]):
            with self.subTest(weights=weights):
                with self.assertRaises(MetricError):
                    n_eff(weights)
