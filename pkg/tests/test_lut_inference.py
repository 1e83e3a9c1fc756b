import itertools
import unittest

import numpy as np

from composer import compose
from config import ComposeConfig, parse_layer_defs
from datasets import synthetic_dataset
from lut_inference import (
    encode,
    lut_error,
    model_forward,
    neuron_forward,
    pool_encoded,
    snap_forward,
)
from models import Codebook, Dataset
from network import ShapeError, build_network, evaluate, forward
from validators import ValidationError
from tests.test_composer import lossless_toy


class EncodeTestCase(unittest.TestCase):
    def setUp(self):
        self.codebook = Codebook([-1.0, 0.0, 2.0, 5.0])

    def test_exact_and_midpoint(self):
        self.assertEqual(list(encode(np.array([2.0, 1.0, -7.0, 9.0]), self.codebook)), [2, 1, 0, 3])

    def test_matches_linear_scan(self):
        values = np.random.default_rng(0).uniform(-3.0, 7.0, size=100000)
        scan = np.argmin(np.abs(values[:, None] - self.codebook.centroids[None, :]), axis=1)
        self.assertTrue(np.array_equal(encode(values, self.codebook), scan))

    def test_monotone_and_idempotent(self):
        values = np.sort(np.random.default_rng(1).normal(size=1000))
        codes = encode(values, self.codebook)
        self.assertTrue(np.all(np.diff(codes) >= 0))
        snapped = self.codebook.snap(values)
        self.assertTrue(np.array_equal(self.codebook.snap(snapped), snapped))


class NeuronForwardTestCase(unittest.TestCase):
    def setUp(self):
        self.table = np.array([[0.25, -0.5], [1.5, 2.0]])

    def test_no_edges(self):
        result = neuron_forward([], [], self.table)
        self.assertEqual(result.y, 0.0)
        self.assertEqual(int(result.counts.sum()), 0)

    def test_single_edge(self):
        result = neuron_forward([1], [0], self.table, bias=0.25)
        self.assertEqual(result.y, -0.25)

    def test_counts_and_sum(self):
        weight_codes = [0, 1, 1, 0, 1]
        input_codes = [1, 1, 0, 1, 1]
        result = neuron_forward(input_codes, weight_codes, self.table, bias=0.125)
        self.assertEqual(result.counts.tolist(), [[0, 2], [1, 2]])
        self.assertEqual(result.y, 2 * -0.5 + 1.5 + 2 * 2.0 + 0.125)

    def test_lut_and_encoding(self):
        lut_codebook = Codebook([0.0, 1.0, 4.0])
        result = neuron_forward([1, 1], [1, 1], self.table, relu_comparator=True, encoding_codebook=lut_codebook)
        self.assertEqual(result.z, 4.0)
        self.assertEqual(result.z_code, 2)

    def test_matches_dequantized_sum(self):
        rng = np.random.default_rng(3)
        table = rng.normal(size=(8, 4))
        weight_codes = rng.integers(0, 8, 300)
        input_codes = rng.integers(0, 4, 300)
        result = neuron_forward(input_codes, weight_codes, table, bias=0.3)
        expected = table[weight_codes, input_codes].sum() + 0.3
        self.assertLessEqual(abs(result.y - expected), 301 * 2.0 ** -17)

    def test_accumulator_saturates(self):
        table = np.array([[30000.0]])
        result = neuron_forward(np.zeros(4, dtype=int), np.zeros(4, dtype=int), table)
        self.assertTrue(result.saturated)
        self.assertEqual(result.y_fixed, 2 ** 31 - 1)

    def test_rejects_mismatched_codes(self):
        with self.assertRaises(ShapeError):
            neuron_forward([0, 1], [0], self.table)
        with self.assertRaises(ValidationError):
            neuron_forward([5], [0], self.table)


class PoolEncodedTestCase(unittest.TestCase):
    def setUp(self):
        self.codebook = Codebook(np.linspace(-2.0, 2.0, 64))

    def test_max_over_codes(self):
        self.assertEqual(int(pool_encoded(np.array([1, 3, 0]), 'max', Codebook([0.0, 1.0, 2.0, 3.0]))), 3)

    def test_decode_of_max_is_max_of_decode(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            codes = rng.integers(0, 64, 4)
            for mode, reduce in (('max', np.max), ('min', np.min)):
                pooled = pool_encoded(codes, mode, self.codebook)
                self.assertEqual(self.codebook.decode(pooled), reduce(self.codebook.decode(codes)))

    def test_single_element_window_is_identity(self):
        self.assertEqual(int(pool_encoded(np.array([17]), 'max', self.codebook)), 17)

    def test_average(self):
        codebook = Codebook([0.0, 1.0, 2.0, 3.0])
        self.assertEqual(float(pool_encoded(np.array([0, 1, 2, 3]), 'avg', codebook)), 1.5)

    def test_mixed_codebooks_rejected(self):
        with self.assertRaises(ValidationError):
            pool_encoded(np.array([0, 1]), 'max', self.codebook,
                         source_codebooks=[self.codebook, Codebook([0.0, 1.0])])


class ModelForwardTestCase(unittest.TestCase):
    def test_lossless_toy_matches_float_forward(self):
        net, data = lossless_toy()
        rm = compose(net, data, ComposeConfig(w=8, u=8, q=4, tree_depth=3, sample_fraction=1.0))
        scores = model_forward(rm, data.samples).scores
        self.assertTrue(np.array_equal(scores, forward(net, data.samples).scores))
        self.assertTrue(np.array_equal(snap_forward(rm, data.samples), scores))
        self.assertEqual(lut_error(rm, data), 0.0)

    def test_single_sigmoid_output_scores_are_activated(self):
        net = build_network((1,), parse_layer_defs('fc:1:sigmoid'), seed=0)
        net.weights[1] = np.array([[1.0]])
        net.biases[1] = np.array([0.0])
        data = Dataset(np.array([[0.25], [-0.25], [0.25], [-0.25]]), np.array([1, 0, 1, 0]), num_classes=2)
        rm = compose(net, data, ComposeConfig(w=2, u=2, q=4, tree_depth=2, sample_fraction=1.0))

        scores = model_forward(rm, data.samples).scores
        np.testing.assert_allclose(scores, forward(net, data.samples).scores)
        np.testing.assert_allclose(snap_forward(rm, data.samples), scores)
        self.assertEqual(evaluate(net, data), 0.0)
        self.assertEqual(lut_error(rm, data), 0.0)
        self.assertEqual(lut_error(rm, data, oracle=True), 0.0)

    def test_agrees_with_snap_oracle(self):
        data = synthetic_dataset(200, (1, 6, 6), 3, seed=4)
        defs = parse_layer_defs('conv:3x3:relu, pool:2:max, fc:6:sigmoid, fc:3:softmax')
        net = build_network((1, 6, 6), defs, seed=1)
        rm = compose(net, data, ComposeConfig(w=16, u=16, q=32, tree_depth=4, sample_fraction=0.5))

        encoded = model_forward(rm, data.samples).scores
        oracle = snap_forward(rm, data.samples)
        self.assertTrue(np.array_equal(np.argmax(encoded, axis=1), np.argmax(oracle, axis=1)))

    def test_trace_records_every_layer(self):
        data = synthetic_dataset(10, (4,), 2, seed=0)
        net = build_network((4,), parse_layer_defs('fc:5:softsign, fc:2:softmax'), seed=0)
        rm = compose(net, data, ComposeConfig(w=4, u=4, q=8, tree_depth=2, sample_fraction=1.0))
        result = model_forward(rm, data.samples[0], trace=True)
        self.assertEqual(result.scores.shape, (1, 2))
        self.assertEqual(len(result.trace), 2)
        self.assertEqual(result.trace[0].output_codes.shape, (1, 5))
        self.assertIsNone(result.trace[1].output_codes)

    def test_rejects_wrong_input_shape(self):
        net, data = lossless_toy()
        rm = compose(net, data, ComposeConfig(w=8, u=8, q=4, tree_depth=3, sample_fraction=1.0))
        with self.assertRaises(ShapeError):
            model_forward(rm, np.zeros((2, 5)))


class EncodedComparisonTestCase(unittest.TestCase):
    def test_code_order_matches_value_order(self):
        codebook = Codebook([-1.5, -0.5, 0.25, 3.0])
        for a, b in itertools.product(range(4), repeat=2):
            self.assertEqual(a < b, codebook.decode(a) < codebook.decode(b))


if __name__ == '__main__':
    unittest.main()
