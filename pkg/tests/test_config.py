import os
import tempfile
import unittest
from dataclasses import replace

from config import ComposeConfig, SweepConfig, TrainConfig, load_experiment_config, parse_layer_defs
from validators import ValidationError


class LayerDefsTestCase(unittest.TestCase):
    def test_parse_all_kinds(self):
        defs = parse_layer_defs('conv:16x3:relu, pool:2:max, fc:10:softmax')
        self.assertEqual(defs[0], {'kind': 'convolution', 'channels': 16, 'kernel': 3, 'activation': 'relu'})
        self.assertEqual(defs[1], {'kind': 'pooling', 'window': 2, 'mode': 'max'})
        self.assertEqual(defs[2], {'kind': 'fully_connected', 'units': 10, 'activation': 'softmax'})

    def test_rejects_bad_definitions(self):
        for text in ('', 'fc', 'pool:2', 'fc:10:tanh', 'lstm:4'):
            with self.assertRaises(ValidationError):
                parse_layer_defs(text)


class ConfigDataclassTestCase(unittest.TestCase):
    def test_compose_sizes_limited_by_tree_depth(self):
        ComposeConfig(w=64, u=64, tree_depth=6)
        with self.assertRaises(ValidationError):
            ComposeConfig(w=128, tree_depth=6)
        with self.assertRaises(ValidationError):
            ComposeConfig(u=12)
        with self.assertRaises(ValidationError):
            ComposeConfig(q=1)

    def test_train_dropout_range(self):
        TrainConfig(dropout_rate=0.0)
        with self.assertRaises(ValidationError):
            TrainConfig(dropout_rate=1.0)

    def test_grid_cardinality_and_order(self):
        grid = SweepConfig(w=(64, 4, 16), u=(16, 4, 64), q=(64,), seeds=(0,)).grid()
        self.assertEqual(len(grid), 9)
        self.assertEqual(grid, sorted(grid))
        self.assertEqual(grid[0], (4, 4, 64, 0))


class LoadExperimentConfigTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name
        with open(os.path.join(self.dir, 'data.csv'), 'w') as f:
            f.write("0,0.1,0.2\n1,0.3,0.4\n")

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, text):
        path = os.path.join(self.dir, 'exp.conf')
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_loads_and_resolves_paths(self):
        path = self.write_config(
            "dataset.path = data.csv\n"
            "model.input = 2\n"
            "model.layers = fc:4:relu, fc:2:softmax\n"
            "compose.w = 16\n"
            "cost.clock_ghz = 2\n"
            "sweep.w = 4,16\n"
            "sweep.u = 4\n"
            "sweep.seeds = 0,1\n"
            "output.dir = out\n"
        )
        config = load_experiment_config(path)
        self.assertEqual(config.dataset.path, os.path.join(self.dir, 'data.csv'))
        self.assertEqual(config.output_dir, os.path.join(self.dir, 'out'))
        self.assertEqual(config.model.input_dims, (2,))
        self.assertEqual(len(config.model.layers), 2)
        self.assertEqual(config.compose.w, 16)
        self.assertEqual(config.cost.cycle_ns, 0.5)
        self.assertEqual(len(config.sweep.grid()), 4)
        self.assertNotIn('dataset.path', os.environ)

    def test_seed_and_output_overrides(self):
        path = self.write_config("dataset.path = data.csv\nmodel.input = 2\nmodel.layers = fc:2:softmax\n")
        config = load_experiment_config(path, seed=7, output_dir=os.path.join(self.dir, 'elsewhere'))
        self.assertEqual(config.train.seed, 7)
        self.assertEqual(config.compose.seed, 7)
        self.assertEqual(config.sweep.seeds, (7,))
        self.assertTrue(config.output_dir.endswith('elsewhere'))

    def test_fingerprint_tracks_named_sections(self):
        path = self.write_config("dataset.path = data.csv\nmodel.input = 2\nmodel.layers = fc:2:softmax\n")
        config = load_experiment_config(path)
        again = load_experiment_config(path)
        self.assertEqual(config.fingerprint('model', 'compose'), again.fingerprint('model', 'compose'))

        wider = replace(config, compose=replace(config.compose, w=16))
        trained_on = ('dataset', 'model', 'train')
        self.assertEqual(wider.fingerprint(*trained_on), config.fingerprint(*trained_on))
        self.assertNotEqual(wider.fingerprint('model', 'compose'), config.fingerprint('model', 'compose'))
        moved = load_experiment_config(path, output_dir=os.path.join(self.dir, 'elsewhere'))
        self.assertEqual(moved.fingerprint('model', 'compose'), config.fingerprint('model', 'compose'))

    def test_rejects_unknown_keys(self):
        path = self.write_config("dataset.path = data.csv\nmodel.layers = fc:2:softmax\ncolour = blue\n")
        with self.assertRaises(ValidationError):
            load_experiment_config(path)

    def test_rejects_misspelled_key_under_known_section(self):
        path = self.write_config("dataset.path = data.csv\nmodel.layers = fc:2:softmax\ncompose.widht = 8\n")
        with self.assertRaises(ValidationError) as ctx:
            load_experiment_config(path)
        self.assertIn('compose.widht', str(ctx.exception))

    def test_rejects_missing_dataset(self):
        path = self.write_config("dataset.path = missing.csv\nmodel.layers = fc:2:softmax\n")
        with self.assertRaises(ValidationError):
            load_experiment_config(path)

    def test_rejects_grid_beyond_tree_depth(self):
        path = self.write_config(
            "dataset.path = data.csv\nmodel.layers = fc:2:softmax\ncompose.tree_depth = 3\n"
            "compose.w = 8\ncompose.u = 8\nsweep.w = 4,16\n"
        )
        with self.assertRaises(ValidationError):
            load_experiment_config(path)

    def test_rejects_unknown_cost_key(self):
        path = self.write_config("dataset.path = data.csv\nmodel.layers = fc:2:softmax\ncost.warp_drive = 1\n")
        with self.assertRaises(ValidationError):
            load_experiment_config(path)


if __name__ == '__main__':
    unittest.main()
