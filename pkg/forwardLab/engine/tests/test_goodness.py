"""
Tests for the goodness encodings and the readout.
"""
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from engine import ops
from engine.exceptions import ConfigError, ShapeError
from engine.goodness import GoodnessConfig, GoodnessHead, bicovg_encode, cc_goodness, pcs_goodness, readout
from engine.gradcheck import numerical_gradient, relative_error
from engine.tensor import GradientGroup, Tensor, Tensor4, no_trace


def region_oracle(values, s):
    """Brute-force region means of a (B, C, H, W) array, channel first then (i, j)."""

    B, C, H, W = values.shape
    out = []
    for b in range(B):
        row = []
        for c in range(C):
            for i in range(s):
                for j in range(s):
                    r0, r1 = (i * H) // s, ((i + 1) * H) // s
                    c0, c1 = (j * W) // s, ((j + 1) * W) // s
                    row.append(values[b, c, r0:r1, c0:c1].mean())
        out.append(row)
    return np.array(out)


def make_head(channels, classes=3, config=None, seed=0):
    group = GradientGroup('head')
    config = config or GoodnessConfig(scales=(1, 2), reduction_ratio=2)
    return group, GoodnessHead(group, 'layer0', channels, classes, config, np.random.default_rng(seed))


class GoodnessConfigTest(SimpleTestCase):
    """Test goodness dimensions."""

    def test_dimension_formula(self):
        """Test D = (C + C/r) * (s1^2 + s2^2)."""

        self.assertEqual(GoodnessConfig(scales=(2, 4)).dim(128), 2880)
        self.assertEqual(GoodnessConfig(scales=(1, 2)).dim(256), 1440)
        self.assertEqual(GoodnessConfig(scales=(1, 2)).dim(8), 45)

    def test_ablation_baseline_is_per_channel(self):
        """Test cc and multiscale off leaves C entries at s=1."""

        config = GoodnessConfig(scales=(1, 2), include_cc=False, include_multiscale=False)

        self.assertEqual(config.dim(64), 64)

    def test_ratio_must_divide_channels(self):
        """Test non-integer C/r is refused."""

        with self.assertRaises(ConfigError):
            GoodnessConfig(reduction_ratio=8).dim(12)

    def test_scales_must_increase(self):
        """Test s1 < s2."""

        with self.assertRaises(ConfigError):
            GoodnessConfig(scales=(2, 2))


class SpatialGoodnessTest(SimpleTestCase):
    """Test per-channel spatial goodness."""

    def test_direct_values(self):
        """Test the 2x2 example at both scales."""

        f = Tensor4(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))

        assert_array_equal(pcs_goodness(f, 1).data, [[7.5]])
        assert_array_equal(pcs_goodness(f, 2).data, [[1.0, 4.0, 9.0, 16.0]])

    def test_matches_region_oracle(self):
        """Test a random 2x3x6x6 input at s=2."""

        values = np.random.default_rng(0).normal(size=(2, 3, 6, 6))

        out = pcs_goodness(Tensor4(values), 2).data

        assert_allclose(out, region_oracle(values ** 2, 2), rtol=0, atol=1e-12)

    def test_scale_equivariance(self):
        """Test scaling f by 2 scales every component by exactly 4."""

        values = np.random.default_rng(1).normal(size=(2, 3, 4, 4))

        base = pcs_goodness(Tensor4(values), 2).data
        scaled = pcs_goodness(Tensor4(2.0 * values), 2).data

        assert_array_equal(scaled, 4.0 * base)

    def test_scale_too_large(self):
        """Test s larger than the spatial size."""

        with self.assertRaises(ShapeError):
            pcs_goodness(Tensor4(np.ones((1, 1, 4, 4))), 8)


class CrossChannelGoodnessTest(SimpleTestCase):
    """Test cross-channel goodness."""

    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.values = self.rng.normal(size=(2, 4, 6, 6))

    def test_one_hot_rows_reduce_to_spatial(self):
        """Test one-hot projections equal the matching per-channel entries exactly."""

        w_cc = Tensor(np.eye(4)[[2, 0]])
        f = Tensor4(self.values)

        cc = cc_goodness(f, w_cc, 2).data
        pcs = pcs_goodness(f, 2).data.reshape(2, 4, 4)

        assert_array_equal(cc.reshape(2, 2, 4), pcs[:, [2, 0]])

    def test_constant_channels(self):
        """Test W = [1, 1] on constant channels a, b gives (a+b)^2."""

        f = np.stack([np.full((3, 3), 2.0), np.full((3, 3), 5.0)])[None]

        out = cc_goodness(Tensor4(f), Tensor(np.ones((1, 2))), 2).data

        assert_allclose(out, np.full((1, 4), 49.0))

    def test_matches_region_oracle(self):
        """Test random projections against mixing then brute-force region means."""

        w = self.rng.normal(size=(2, 4))
        mixed = np.einsum('kc,bchw->bkhw', w, self.values)

        out = cc_goodness(Tensor4(self.values), Tensor(w), 2).data

        assert_allclose(out, region_oracle(mixed ** 2, 2), rtol=0, atol=1e-12)

    def test_permutation_covariance(self):
        """Test permuting channels and projection columns together."""

        w = self.rng.normal(size=(2, 4))
        perm = np.array([3, 1, 0, 2])

        base = cc_goodness(Tensor4(self.values), Tensor(w), 2).data
        permuted = cc_goodness(Tensor4(self.values[:, perm]), Tensor(w[:, perm]), 2).data

        assert_allclose(permuted, base, rtol=1e-12, atol=1e-14)

    def test_projection_gradient(self):
        """Test the W_cc gradient against finite differences."""

        group = GradientGroup('cc')
        w = group.register('w_cc', self.rng.normal(size=(2, 4)))
        f = Tensor4(self.values)

        group.backward(ops.total(ops.square(cc_goodness(f, w, 2))))

        def fn(value):
            with no_trace():
                return np.sum(cc_goodness(f, Tensor(value), 2).data ** 2)

        self.assertLess(relative_error(w.grad, numerical_gradient(fn, w.data)), 1e-5)

    def test_projection_width_mismatch(self):
        """Test W_cc must have C columns."""

        with self.assertRaises(ShapeError):
            cc_goodness(Tensor4(self.values), Tensor(np.ones((1, 3))), 1)


class EncodeAndReadoutTest(SimpleTestCase):
    """Test the full goodness vector and the readout."""

    def test_vector_length_and_non_negativity(self):
        """Test D entries, all non-negative."""

        group, head = make_head(4)
        f = Tensor4(np.random.default_rng(3).normal(size=(2, 4, 4, 4)))

        g = bicovg_encode(f, head, layer=5)

        self.assertEqual(g.values.shape, (2, head.dim))
        self.assertEqual(head.dim, (4 + 2) * 5)
        self.assertEqual(g.logits.shape, (2, 3))
        self.assertEqual(g.layer, 5)
        self.assertTrue(np.all(g.values.data >= 0))
        group.release()

    def test_segment_order(self):
        """Test the layout [pcs(s1) | cc(s1) | pcs(s2) | cc(s2)]."""

        group, head = make_head(4)
        f = Tensor4(np.random.default_rng(4).normal(size=(1, 4, 4, 4)))

        g = bicovg_encode(f, head).values.data[0]

        expected = np.concatenate([
            pcs_goodness(f, 1).data[0], cc_goodness(f, head.w_cc, 1).data[0],
            pcs_goodness(f, 2).data[0], cc_goodness(f, head.w_cc, 2).data[0],
        ])
        assert_array_equal(g, expected)
        group.release()

    def test_readout_zero_and_arithmetic(self):
        """Test zero weights give zero logits."""

        group, head = make_head(4)
        head.weight.assign(np.zeros_like(head.weight.data))
        head.bias.assign(np.zeros_like(head.bias.data))

        with no_trace():
            logits = readout(Tensor(np.ones((2, head.dim))), head)

        assert_array_equal(logits.data, np.zeros((2, 3)))

    def test_readout_length_mismatch(self):
        """Test g must have D entries."""

        group, head = make_head(4)

        with self.assertRaises(ShapeError):
            readout(Tensor(np.ones((1, head.dim + 1))), head)

    def test_readout_initialization_bounds(self):
        """Test readout weights are drawn within 1/sqrt(D)."""

        _, head = make_head(16, config=GoodnessConfig(scales=(1, 2), reduction_ratio=8))
        bound = 1.0 / np.sqrt(head.dim)

        self.assertLessEqual(np.abs(head.weight.data).max(), bound)
        self.assertLessEqual(np.abs(head.bias.data).max(), bound)

    def test_cross_entropy_gradient_through_readout(self):
        """Test d CE / d W_l against finite differences."""

        group, head = make_head(4)
        values = Tensor(np.abs(np.random.default_rng(5).normal(size=(3, head.dim))))
        labels = np.array([0, 2, 1])

        group.backward(ops.cross_entropy(readout(values, head), labels))

        def fn(weight):
            with no_trace():
                return ops.cross_entropy(ops.linear(values, Tensor(weight), head.bias), labels).item()

        self.assertLess(relative_error(head.weight.grad, numerical_gradient(fn, head.weight.data)), 1e-6)
