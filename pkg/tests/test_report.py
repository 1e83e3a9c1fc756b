import csv
import os
import tempfile
import unittest

from composer import compose, model_memory_bytes
from config import ComposeConfig, parse_layer_defs
from datasets import synthetic_dataset
from network import build_network
from report import (
    MEMORY_FORMULA,
    check_shares,
    compare_reference,
    edp_tradeoff,
    format_sim_text,
    format_summary,
    report_memory,
    write_sim_csv,
    write_summary,
)
from rna_sim import simulate
from sweep import SweepRow
from validators import ValidationError


def sweep_row(w, delta_e, edp, memory_bytes, seed=0):
    return SweepRow(w=w, u=4, q=64, seed=seed, delta_e=delta_e, e_clustered=0.1 + delta_e, e_baseline=0.1,
                    energy_j=edp, cycles=1000, edp=edp, memory_bytes=memory_bytes, iterations=1, converged=True)


class TradeoffTestCase(unittest.TestCase):
    def setUp(self):
        self.rows = [
            sweep_row(4, 0.05, 1.0, 100),
            sweep_row(16, 0.015, 2.0, 200),
            sweep_row(64, 0.0, 8.0, 800),
        ]

    def test_picks_cheapest_within_budget(self):
        picks = edp_tradeoff(self.rows)
        self.assertEqual([p['threshold'] for p in picks], [None, 0.01, 0.02, 0.04])
        self.assertEqual([p['row'].w for p in picks], [64, 64, 16, 16])
        self.assertEqual(picks[2]['edp_ratio'], 0.25)
        self.assertEqual(picks[2]['memory_ratio'], 0.25)
        self.assertEqual(picks[0]['edp_ratio'], 1.0)

    def test_negative_gap_is_the_reference(self):
        rows = self.rows + [sweep_row(32, -0.01, 10.0, 400)]
        picks = edp_tradeoff(rows)
        self.assertEqual(picks[0]['row'].w, 32)
        self.assertEqual(picks[1]['row'].w, 64)
        self.assertEqual(picks[1]['edp_ratio'], 0.8)

    def test_ties_break_on_memory_then_sizes(self):
        rows = [sweep_row(16, 0.0, 1.0, 300), sweep_row(4, 0.0, 1.0, 300), sweep_row(64, 0.0, 1.0, 200)]
        self.assertEqual(edp_tradeoff(rows, thresholds=(None,))[0]['row'].w, 64)
        self.assertEqual(edp_tradeoff(rows[:2], thresholds=(None,))[0]['row'].w, 4)

    def test_no_rows(self):
        self.assertEqual(edp_tradeoff([]), [])


class CheckSharesTestCase(unittest.TestCase):
    def test_valid_and_invalid(self):
        check_shares({'a': 0.25, 'b': 0.75}, 'energy')
        check_shares({'a': 0.0, 'b': 0.0}, 'energy')
        with self.assertRaises(ValidationError):
            check_shares({'a': 0.5, 'b': 0.4}, 'energy')
        with self.assertRaises(ValidationError):
            check_shares({'a': -0.5, 'b': 1.5}, 'time')


class SimulationReportTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        data = synthetic_dataset(20, (8,), 3, seed=0)
        net = build_network((8,), parse_layer_defs('fc:6:sigmoid, fc:3:softmax'), seed=0)
        cls.rm = compose(net, data, ComposeConfig(w=4, u=4, q=8, tree_depth=3, sample_fraction=1.0))
        cls.sim = simulate(cls.rm, data)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_memory(self):
        self.assertEqual(report_memory(self.rm), model_memory_bytes(self.rm))

    def test_reference_rows(self):
        rows = compare_reference(self.sim)
        self.assertEqual([r['source'] for r in rows], ['published'] * 3 + ['simulated'])
        self.assertEqual(rows[0]['gops_per_mm2'], 1904.6)
        self.assertEqual(rows[-1]['gops_per_w'], self.sim.gops_per_w)

    def test_csv(self):
        path = write_sim_csv(self.sim, os.path.join(self.tmp.name, 'sim.csv'))
        with open(path, newline='') as f:
            records = {r['metric']: r['value'] for r in csv.DictReader(f)}
        self.assertEqual(int(records['samples']), 20)
        self.assertEqual(int(records['memory_bytes']), self.sim.memory_bytes)
        self.assertEqual(float(records['total_energy_j']), self.sim.total_energy_j)
        self.assertIn('energy_share.accumulation', records)

    def test_text(self):
        text = format_sim_text(self.sim)
        self.assertIn('Energy / time by block class', text)
        self.assertIn('accumulation', text)

    def test_summary_sections(self):
        rows = [sweep_row(4, 0.02, 1.0, 100), sweep_row(16, 0.0, 3.0, 300)]
        path = write_summary(os.path.join(self.tmp.name, 'out', 'summary.md'),
                             rm=self.rm, sim_report=self.sim, sweep_rows=rows, baseline_error=0.125)
        with open(path) as f:
            text = f.read()
        for heading in ('## Memory', '## Energy and time breakdown', '## Area breakdown', '## Efficiency',
                        '## Sweep', '## Accuracy / efficiency trade-off'):
            self.assertIn(heading, text)
        self.assertIn(MEMORY_FORMULA, text)
        self.assertIn('Baseline test error: 0.1250', text)
        self.assertIn(f"Total: {model_memory_bytes(self.rm)} bytes", text)
        self.assertNotIn('## Reinterpretation', text)

    def test_empty_summary(self):
        self.assertEqual(format_summary(title='Empty'), "# Empty\n")


if __name__ == '__main__':
    unittest.main()
