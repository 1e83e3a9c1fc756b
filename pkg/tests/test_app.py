import os
import shutil
import tempfile
import unittest

from app import (
    EXIT_CONFIG_ERROR,
    EXIT_STAGE_FAILED,
    FINGERPRINT_FILE,
    MODEL_FILE,
    REINTERPRET_REPORT_FILE,
    REINTERPRETED_FILE,
    SIM_CSV,
    SUMMARY_FILE,
    Experiment,
    StageError,
    build_parser,
    main,
    pipeline_stage,
)
from config import load_experiment_config
from datasets import synthetic_dataset
from storage import load_model, load_reinterpreted
from sweep import SWEEP_CSV

CONFIG = """\
dataset.path = data.csv
dataset.validation_fraction = 0.25
model.input = 6
model.layers = fc:8:sigmoid, fc:3:softmax
train.epochs = 5
train.dropout_rate = 0
train.batch_size = 16
train.learning_rate = 0.1
compose.w = 4
compose.u = 4
compose.q = 8
compose.tree_depth = 3
compose.max_iters = 2
compose.sample_fraction = 0.5
sim.samples = 8
sweep.w = 2,4
sweep.u = 2
sweep.workers = 2
output.dir = out
"""


class RapidnnCliTestCase(unittest.TestCase):
    def setUp(self):
        self.dir = tempfile.mkdtemp()
        data = synthetic_dataset(80, (6,), 3, seed=0, noise=0.2)
        with open(os.path.join(self.dir, 'data.csv'), 'w') as f:
            for label, sample in zip(data.labels, data.samples):
                f.write(','.join([str(label)] + [repr(float(v)) for v in sample]) + '\n')
        self.out = os.path.join(self.dir, 'out')

    def tearDown(self):
        shutil.rmtree(self.dir)

    def write_config(self, extra='', text=CONFIG):
        path = os.path.join(self.dir, 'exp.conf')
        with open(path, 'w') as f:
            f.write(text + extra)
        return path

    def test_train_writes_model(self):
        self.assertEqual(main(['train', '--config', self.write_config()]), 0)
        self.assertTrue(os.path.exists(os.path.join(self.out, MODEL_FILE)))
        self.assertTrue(os.path.exists(os.path.join(self.out, FINGERPRINT_FILE)))

    def test_compose_reuses_trained_model(self):
        config = self.write_config()
        main(['train', '--config', config])
        mtime = os.path.getmtime(os.path.join(self.out, MODEL_FILE))
        self.assertEqual(main(['compose', '--config', config]), 0)
        self.assertEqual(os.path.getmtime(os.path.join(self.out, MODEL_FILE)), mtime)
        self.assertTrue(os.path.exists(os.path.join(self.out, REINTERPRETED_FILE)))
        self.assertTrue(os.path.exists(os.path.join(self.out, REINTERPRET_REPORT_FILE)))

    def test_changed_config_rebuilds_stale_artifacts(self):
        self.assertEqual(main(['compose', '--config', self.write_config()]), 0)
        changed = CONFIG.replace('fc:8:sigmoid', 'fc:16:relu').replace('compose.w = 4', 'compose.w = 8')
        path = self.write_config(text=changed)

        rm = Experiment(load_experiment_config(path)).reinterpreted()
        self.assertEqual(rm.w, 8)
        self.assertEqual(rm.layers[0].spec.activation, 'relu')
        self.assertEqual(load_model(os.path.join(self.out, MODEL_FILE)).weights[1].shape, (16, 6))

    def test_compose_change_keeps_trained_model(self):
        config = self.write_config()
        main(['compose', '--config', config])
        mtime = os.path.getmtime(os.path.join(self.out, MODEL_FILE))
        smaller_q = self.write_config(text=CONFIG.replace('compose.q = 8', 'compose.q = 4'))
        self.assertEqual(main(['compose', '--config', smaller_q]), 0)
        self.assertEqual(os.path.getmtime(os.path.join(self.out, MODEL_FILE)), mtime)
        self.assertEqual(load_reinterpreted(os.path.join(self.out, REINTERPRETED_FILE)).q, 4)

    def test_report_ignores_sweep_from_another_config(self):
        config = self.write_config()
        self.assertEqual(main(['run', '--config', config]), 0)
        other_grid = self.write_config(text=CONFIG.replace('sweep.w = 2,4', 'sweep.w = 2'))
        self.assertEqual(main(['report', '--config', other_grid]), 0)
        with open(os.path.join(self.out, SUMMARY_FILE)) as f:
            self.assertNotIn('## Sweep', f.read())

    def test_unknown_key_is_a_config_error(self):
        config = self.write_config('training.epochs = 3\n')
        self.assertEqual(main(['train', '--config', config]), EXIT_CONFIG_ERROR)
        self.assertFalse(os.path.exists(self.out))

    def test_missing_config_file(self):
        self.assertEqual(main(['train', '--config', os.path.join(self.dir, 'nope.conf')]), EXIT_CONFIG_ERROR)

    def test_run_produces_every_artifact(self):
        self.assertEqual(main(['run', '--config', self.write_config()]), 0)
        for name in (MODEL_FILE, REINTERPRETED_FILE, SIM_CSV, SWEEP_CSV, SUMMARY_FILE):
            self.assertTrue(os.path.exists(os.path.join(self.out, name)), name)
        with open(os.path.join(self.out, SUMMARY_FILE)) as f:
            summary = f.read()
        self.assertIn('## Energy and time breakdown', summary)
        self.assertIn('## Reinterpretation', summary)
        self.assertIn('## Accuracy / efficiency trade-off', summary)

    def test_stage_failure_keeps_earlier_artifacts(self):
        config = self.write_config('cost.tiles = 1\ncost.rnas_per_tile = 1\n')
        self.assertEqual(main(['simulate', '--config', config]), EXIT_STAGE_FAILED)
        self.assertTrue(os.path.exists(os.path.join(self.out, MODEL_FILE)))
        self.assertTrue(os.path.exists(os.path.join(self.out, REINTERPRETED_FILE)))
        self.assertFalse(os.path.exists(os.path.join(self.out, SIM_CSV)))

    def test_out_and_seed_overrides(self):
        other = os.path.join(self.dir, 'elsewhere')
        self.assertEqual(main(['train', '--config', self.write_config(), '--seed', '3', '--out', other]), 0)
        self.assertTrue(os.path.exists(os.path.join(other, MODEL_FILE)))

    def test_parser_rejects_unknown_command(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(['deploy', '--config', 'x'])


class PipelineStageTestCase(unittest.TestCase):
    def test_wraps_failures(self):
        @pipeline_stage('demo')
        def broken():
            raise ValueError('boom')

        with self.assertRaises(StageError) as ctx:
            broken()
        self.assertEqual(ctx.exception.stage, 'demo')
        self.assertIsInstance(ctx.exception.cause, ValueError)

    def test_nested_failure_keeps_inner_stage(self):
        @pipeline_stage('inner')
        def inner():
            raise ValueError('boom')

        @pipeline_stage('outer')
        def outer():
            return inner()

        with self.assertRaises(StageError) as ctx:
            outer()
        self.assertEqual(ctx.exception.stage, 'inner')

    def test_passes_results_through(self):
        self.assertEqual(pipeline_stage('ok')(lambda: 42)(), 42)


if __name__ == '__main__':
    unittest.main()
