import math
import unittest

import numpy as np

from activation import activate, quantize_activation, saturation_bounds, sigmoid
from validators import ValidationError


class ActivateTestCase(unittest.TestCase):
    def test_functions(self):
        y = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(activate('relu', y), [0.0, 0.0, 3.0])
        np.testing.assert_allclose(activate('softsign', y), [-2.0 / 3.0, 0.0, 0.75])
        np.testing.assert_allclose(activate('sigmoid', y), 1.0 / (1.0 + np.exp(-y)))
        np.testing.assert_allclose(activate('softmax', y[None]).sum(), 1.0)
        with self.assertRaises(ValidationError):
            activate('tanh', y)

    def test_sigmoid_is_stable(self):
        with np.errstate(over='raise'):
            values = sigmoid(np.array([-1000.0, 1000.0]))
        np.testing.assert_allclose(values, [0.0, 1.0])

    def test_saturation_bounds(self):
        low, high = saturation_bounds('sigmoid', 1e-4)
        self.assertAlmostEqual(high, math.log(9999.0))
        self.assertAlmostEqual(abs(sigmoid(np.array([high]))[0] - 1.0), 1e-4)
        self.assertEqual(saturation_bounds('relu'), (0.0, math.inf))
        self.assertAlmostEqual(saturation_bounds('softsign', 1e-2)[1], 99.0)


class QuantizeActivationTestCase(unittest.TestCase):
    def setUp(self):
        self.observed = np.random.default_rng(0).normal(0.0, 4.0, size=5000)

    def test_sigmoid_table(self):
        lut = quantize_activation('sigmoid', 64, self.observed)
        self.assertLessEqual(len(lut), 64)
        self.assertEqual(lut.points[0], lut.lower)
        self.assertEqual(lut.points[-1], lut.upper)
        self.assertTrue(np.all(np.diff(lut.points) > 0))
        np.testing.assert_allclose(lut.outputs, sigmoid(lut.points))
        self.assertGreaterEqual(lut.lower, saturation_bounds('sigmoid')[0])

    def test_query_below_domain_clamps(self):
        lut = quantize_activation('sigmoid', 16, self.observed, placement='uniform')
        self.assertEqual(lut.lookup(np.array([-1e6]))[0], sigmoid(np.array([lut.lower]))[0])

    def test_zero_maps_to_half(self):
        lut = quantize_activation('sigmoid', 3, np.concatenate([np.full(1000, -5.0), [0.0], np.full(1000, 5.0)]),
                                  placement='uniform')
        self.assertEqual(lut.lookup(np.array([0.0]))[0], 0.5)

    def test_midpoint_goes_to_lower_row(self):
        lut = quantize_activation('relu', 2, np.repeat([0.0, 2.0], 1000), placement='uniform')
        self.assertEqual(list(lut.points), [0.0, 2.0])
        self.assertEqual(lut.lookup(np.array([1.0]))[0], 0.0)

    def test_relu_domain_starts_at_zero(self):
        lut = quantize_activation('relu', 8, self.observed)
        self.assertEqual(lut.lower, 0.0)

    def test_constant_function_collapses(self):
        lut = quantize_activation('sigmoid', 8, np.full(100, 0.5))
        self.assertEqual(len(lut), 1)
        self.assertEqual(lut.lookup(np.array([100.0]))[0], sigmoid(np.array([0.5]))[0])

    def test_rejects_bad_requests(self):
        with self.assertRaises(ValidationError):
            quantize_activation('softmax', 8, self.observed)
        with self.assertRaises(ValidationError):
            quantize_activation('sigmoid', 1, self.observed)
        with self.assertRaises(ValidationError):
            quantize_activation('sigmoid', 8, self.observed, placement='log')


if __name__ == '__main__':
    unittest.main()
