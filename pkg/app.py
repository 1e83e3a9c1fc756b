import argparse
import json
import logging
import os
import sys
from functools import wraps

from composer import ReinterpretReport, reinterpret
from config import load_experiment_config
from datasets import load_experiment_data
from lut_inference import lut_error
from network import build_network, evaluate, train
from report import write_sim_csv, write_sim_text, write_summary
from rna_sim import simulate
from storage import load_model, load_reinterpreted, save_model, save_reinterpreted
from sweep import SWEEP_CSV, read_sweep_csv, run_sweep, sim_workload
from validators import ValidationError

logger = logging.getLogger(__name__)

MODEL_FILE = 'model.rpdn'
REINTERPRETED_FILE = 'reinterpreted.rpdm'
REINTERPRET_REPORT_FILE = 'reinterpret_report.json'
SIM_CSV = 'sim_report.csv'
SIM_TEXT = 'sim_report.txt'
SUMMARY_FILE = 'summary.md'
FINGERPRINT_FILE = 'fingerprints.json'

# Config sections each artifact is built from
MODEL_SECTIONS = ('dataset', 'model', 'train')
REINTERPRETED_SECTIONS = MODEL_SECTIONS + ('compose',)
SWEEP_SECTIONS = REINTERPRETED_SECTIONS + ('cost', 'sim', 'sweep')

EXIT_STAGE_FAILED = 1
EXIT_CONFIG_ERROR = 2


class StageError(RuntimeError):
    """A pipeline stage failed; artifacts already written stay in place"""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed: {cause}")


def configure_logging(verbose=False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def pipeline_stage(name):
    """Decorator naming a pipeline stage in logs and in any failure it raises"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            logger.info(f"🚀 Stage '{name}' starting")
            try:
                result = func(*args, **kwargs)
            except StageError:
                raise
            except Exception as e:
                logger.error(f"❌ Stage '{name}' failed: {e}")
                raise StageError(name, e) from e
            logger.info(f"✅ Stage '{name}' done")
            return result
        return wrapper
    return decorator


class Experiment:
    """Artifact directory of one config; stages reuse what earlier stages wrote"""

    def __init__(self, config):
        self.config = config
        self.out_dir = config.output_dir
        self._splits = None
        os.makedirs(self.out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    @property
    def splits(self):
        if self._splits is None:
            self._splits = load_experiment_data(self.config.dataset, seed=self.config.train.seed)
            logger.info(f"📂 Loaded {len(self._splits.train)} train / {len(self._splits.validation)} validation "
                        f"samples")
        return self._splits

    def evaluation_split(self):
        splits = self.splits
        return splits.test if splits.test is not None and len(splits.test) else splits.validation

    def fingerprints(self):
        if not os.path.exists(self.path(FINGERPRINT_FILE)):
            return {}
        with open(self.path(FINGERPRINT_FILE)) as f:
            return json.load(f)

    def record(self, name, sections):
        stored = self.fingerprints()
        stored[name] = self.config.fingerprint(*sections)
        with open(self.path(FINGERPRINT_FILE), 'w') as f:
            json.dump(stored, f, indent=2, sort_keys=True)

    def is_current(self, name, sections):
        """True when the artifact exists and was built from the current config"""
        if not os.path.exists(self.path(name)):
            return False
        if self.fingerprints().get(name) == self.config.fingerprint(*sections):
            return True
        logger.warning(f"⚠️  {self.path(name)} was built from a different config, rebuilding")
        return False

    def network(self):
        if self.is_current(MODEL_FILE, MODEL_SECTIONS):
            logger.info(f"📂 Reusing {self.path(MODEL_FILE)}")
            return load_model(self.path(MODEL_FILE))
        return self.train_stage()

    def reinterpreted(self):
        if self.is_current(REINTERPRETED_FILE, REINTERPRETED_SECTIONS):
            logger.info(f"📂 Reusing {self.path(REINTERPRETED_FILE)}")
            return load_reinterpreted(self.path(REINTERPRETED_FILE))
        return self.compose_stage()

    def sweep_rows(self):
        if not self.is_current(SWEEP_CSV, SWEEP_SECTIONS):
            return None
        return read_sweep_csv(self.path(SWEEP_CSV))

    def reinterpret_report(self):
        if not self.is_current(REINTERPRET_REPORT_FILE, REINTERPRETED_SECTIONS):
            return None
        with open(self.path(REINTERPRET_REPORT_FILE)) as f:
            return ReinterpretReport.from_dict(json.load(f))

    @pipeline_stage('train')
    def train_stage(self):
        cfg = self.config
        net = build_network(cfg.model.input_dims, cfg.model.layers, seed=cfg.train.seed)
        result = train(net, self.splits.train, cfg.train)
        save_model(result.network, self.path(MODEL_FILE))
        self.record(MODEL_FILE, MODEL_SECTIONS)
        logger.info(f"📊 Baseline error {evaluate(result.network, self.evaluation_split()):.4f}")
        return result.network

    @pipeline_stage('compose')
    def compose_stage(self):
        net = self.network()
        result = reinterpret(net, self.splits, self.config.compose, self.config.train)
        save_reinterpreted(result.model, self.path(REINTERPRETED_FILE))
        with open(self.path(REINTERPRET_REPORT_FILE), 'w') as f:
            json.dump(result.report.to_dict(), f, indent=2, sort_keys=True)
        self.record(REINTERPRETED_FILE, REINTERPRETED_SECTIONS)
        self.record(REINTERPRET_REPORT_FILE, REINTERPRETED_SECTIONS)
        logger.info(f"💾 Saved reinterpretation report to {self.path(REINTERPRET_REPORT_FILE)}")
        return result.model

    def _simulate(self, rm):
        cfg = self.config
        return simulate(rm, sim_workload(self.splits, cfg.sim.samples), cfg.cost, sharing=cfg.sim.sharing)

    @pipeline_stage('simulate')
    def simulate_stage(self):
        report = self._simulate(self.reinterpreted())
        write_sim_csv(report, self.path(SIM_CSV))
        write_sim_text(report, self.path(SIM_TEXT))
        if report.functional_mismatches:
            raise ValidationError(f"{report.functional_mismatches} samples disagree with the encoded model")
        return report

    @pipeline_stage('sweep')
    def sweep_stage(self):
        rows = run_sweep(self.config, self.splits, out_dir=self.out_dir)
        self.record(SWEEP_CSV, SWEEP_SECTIONS)
        return rows

    @pipeline_stage('report')
    def report_stage(self, sim_report=None):
        rm = self.reinterpreted()
        if sim_report is None:
            sim_report = self._simulate(rm)
        sweep_rows = self.sweep_rows()
        baseline = evaluate(self.network(), self.evaluation_split())
        logger.info(f"📊 Encoded model error {lut_error(rm, self.evaluation_split()):.4f}")
        return write_summary(self.path(SUMMARY_FILE), rm=rm, reinterpret_report=self.reinterpret_report(),
                             sim_report=sim_report, sweep_rows=sweep_rows, baseline_error=baseline)


def run(config):
    """Train, compose, simulate, sweep and report into config.output_dir"""
    experiment = Experiment(config)
    experiment.network()
    experiment.reinterpreted()
    sim_report = experiment.simulate_stage()
    experiment.sweep_stage()
    experiment.report_stage(sim_report)
    return experiment.out_dir


STAGES = {
    'train': lambda e: e.train_stage(),
    'compose': lambda e: e.compose_stage(),
    'simulate': lambda e: e.simulate_stage(),
    'sweep': lambda e: e.sweep_stage(),
    'report': lambda e: e.report_stage(),
}


def build_parser():
    parser = argparse.ArgumentParser(prog='rapidnn', description='Reinterpret DNNs into lookup tables and '
                                                                 'simulate them on an in-memory accelerator')
    parser.add_argument('command', choices=sorted(STAGES) + ['run'])
    parser.add_argument('--config', required=True, help='experiment key = value file')
    parser.add_argument('--seed', type=int, help='override every seed in the config')
    parser.add_argument('--out', help='override output.dir')
    parser.add_argument('--verbose', action='store_true')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    try:
        config = load_experiment_config(args.config, seed=args.seed, output_dir=args.out)
    except ValidationError as e:
        logger.error(f"❌ Invalid config {args.config}: {e}")
        return EXIT_CONFIG_ERROR

    logger.info(f"🔧 Config {config.source}, output in {config.output_dir}")
    try:
        if args.command == 'run':
            run(config)
        else:
            STAGES[args.command](Experiment(config))
    except StageError as e:
        logger.error(f"❌ {e}; artifacts so far are in {config.output_dir}")
        return EXIT_STAGE_FAILED

    logger.info("✅ Done")
    return 0


if __name__ == '__main__':
    sys.exit(main())
