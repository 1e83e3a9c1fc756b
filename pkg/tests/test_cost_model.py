import os
import tempfile
import unittest

from cost_model import (
    PUBLISHED_CHIP_AREA_MM2,
    PUBLISHED_RNA_AREA_UM2,
    RnaCostModel,
    load_cost_model,
)
from validators import ValidationError


class RnaCostModelTestCase(unittest.TestCase):
    def setUp(self):
        self.cost = RnaCostModel()

    def test_reference_block_area(self):
        self.assertAlmostEqual(self.cost.rna_area_um2(), PUBLISHED_RNA_AREA_UM2, places=9)
        self.assertAlmostEqual(self.cost.rna_area_um2(w=64, u=64, q=64, u_next=64), PUBLISHED_RNA_AREA_UM2, places=9)

    def test_chip_area_and_power(self):
        area = self.cost.chip_area_mm2()
        self.assertAlmostEqual(area, 124.16)
        self.assertLess(abs(area - PUBLISHED_CHIP_AREA_MM2) / PUBLISHED_CHIP_AREA_MM2, 1e-3)
        self.assertAlmostEqual(self.cost.chip_power_w(), 153.6896)

    def test_area_breakdown_sums_to_chip(self):
        parts = self.cost.area_breakdown()
        self.assertAlmostEqual(sum(parts.values()), self.cost.chip_area_mm2())
        self.assertGreater(parts['crossbar'], parts['controller'])

    def test_scales_with_codebook(self):
        small = self.cost.block_areas(w=16, u=16, q=16, u_next=16)
        self.assertAlmostEqual(small['crossbar'], 3136.0 / 16)
        self.assertAlmostEqual(small['activation_am'], 83.2 / 4)
        self.assertEqual(small['counter'], 538.6)
        fixed = RnaCostModel(scale_with_codebook=False)
        self.assertAlmostEqual(fixed.rna_area_um2(w=16, u=16), PUBLISHED_RNA_AREA_UM2, places=9)

    def test_derived_timing(self):
        self.assertEqual(self.cost.cycle_ns, 1.0)
        self.assertEqual(self.cost.cam_search_cycles, 1)
        self.assertEqual(RnaCostModel(clock_ghz=4.0).cam_search_cycles, 2)
        self.assertEqual(self.cost.counter_max, 4095)
        self.assertEqual(self.cost.capacity_rnas, 32000)

    def test_rejects_bad_values(self):
        with self.assertRaises(ValidationError):
            RnaCostModel(tiles=0)
        with self.assertRaises(ValidationError):
            RnaCostModel(crossbar_area_um2=-1.0)
        with self.assertRaises(ValidationError):
            RnaCostModel(operand_bits=30)


class LoadCostModelTestCase(unittest.TestCase):
    def test_defaults(self):
        self.assertEqual(load_cost_model(), RnaCostModel())

    def test_overrides_are_coerced(self):
        cost = load_cost_model(overrides={'clock_ghz': '2', 'scale_with_codebook': 'false'})
        self.assertEqual(cost.cycle_ns, 0.5)
        self.assertFalse(cost.scale_with_codebook)

    def test_unknown_key(self):
        with self.assertRaises(ValidationError) as ctx:
            load_cost_model(overrides={'crossbar_volume': 1})
        self.assertIn('crossbar_volume', str(ctx.exception))

    def test_cost_file_then_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'cost.conf')
            with open(path, 'w') as f:
                f.write("cost.tiles=16\nrnas_per_tile=500\n")
            cost = load_cost_model(path, overrides={'rnas_per_tile': 250})
        self.assertEqual(cost.tiles, 16)
        self.assertEqual(cost.rnas_per_tile, 250)
        self.assertEqual(cost.capacity_rnas, 4000)

    def test_missing_file(self):
        with self.assertRaises(ValidationError):
            load_cost_model('/nonexistent/cost.conf')


if __name__ == '__main__':
    unittest.main()
