"""
(w, u, q, seed) grid sweeps on an APScheduler worker pool

The baseline network is trained once per seed. Each grid point then
reinterprets that baseline, simulates the result and writes its artifacts
into its own directory.
"""
import csv
import logging
import os
import threading
from dataclasses import astuple, dataclass, fields, replace
from datetime import datetime

from apscheduler.events import EVENT_JOB_ERROR, EVENT_JOB_EXECUTED
from apscheduler.executors.pool import ThreadPoolExecutor
from apscheduler.schedulers.background import BackgroundScheduler

from composer import reinterpret
from network import build_network, train
from report import write_sim_csv
from rna_sim import simulate
from storage import save_reinterpreted

logger = logging.getLogger(__name__)

SWEEP_CSV = 'sweep.csv'


class SweepError(RuntimeError):
    """One or more grid points failed; rows of the others are kept"""

    def __init__(self, failures, rows):
        self.failures = failures
        self.rows = rows
        points = ', '.join(f"w={w} u={u} q={q} seed={s}" for (w, u, q, s) in sorted(failures))
        super().__init__(f"{len(failures)} grid point(s) failed: {points}")


@dataclass
class SweepRow:
    w: int
    u: int
    q: int
    seed: int
    delta_e: float
    e_clustered: float
    e_baseline: float
    energy_j: float
    cycles: int
    edp: float
    memory_bytes: int
    iterations: int
    converged: bool

    @property
    def key(self):
        return (self.w, self.u, self.q, self.seed)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def point_dir(out_dir, w, u, q, seed):
    return os.path.join(out_dir, 'sweep', f"w{w}_u{u}_q{q}_seed{seed}")


def sim_workload(splits, samples):
    """First `samples` test samples, or validation samples when there is no test split"""
    data = splits.test if splits.test is not None and len(splits.test) else splits.validation
    return data.subset(slice(0, min(samples, len(data))))


def train_baselines(config, splits, seeds):
    """One trained baseline network per seed"""
    baselines = {}
    for seed in seeds:
        net = build_network(config.model.input_dims, config.model.layers, seed=seed)
        baselines[seed] = train(net, splits.train, replace(config.train, seed=seed)).network
        logger.info(f"✅ Baseline for seed {seed} trained")
    return baselines


def run_point(config, splits, baseline, w, u, q, seed, out_dir=None):
    """Reinterpret and simulate one grid point"""
    compose_cfg = replace(config.compose, w=w, u=u, q=q, seed=seed)
    result = reinterpret(baseline, splits, compose_cfg, replace(config.train, seed=seed))
    sim = simulate(result.model, sim_workload(splits, config.sim.samples), config.cost, sharing=config.sim.sharing)

    if out_dir:
        target = point_dir(out_dir, w, u, q, seed)
        os.makedirs(target, exist_ok=True)
        save_reinterpreted(result.model, os.path.join(target, 'reinterpreted.rpdm'))
        write_sim_csv(sim, os.path.join(target, 'sim_report.csv'))

    report = result.report
    return SweepRow(
        w=w, u=u, q=q, seed=seed,
        delta_e=report.delta_e,
        e_clustered=report.best.e_clustered,
        e_baseline=report.best.e_baseline,
        energy_j=sim.total_energy_j,
        cycles=sim.total_cycles,
        edp=sim.edp,
        memory_bytes=report.memory_bytes,
        iterations=len(report.iterations),
        converged=report.converged,
    )


def init_scheduler(workers):
    return BackgroundScheduler(executors={'default': ThreadPoolExecutor(max_workers=workers)})


def run_sweep(config, splits, baselines=None, out_dir=None):
    """All grid points of config.sweep; rows come back sorted by (w, u, q, seed)"""
    grid = config.sweep.grid()
    if baselines is None:
        baselines = train_baselines(config, splits, config.sweep.seeds)

    rows = {}
    failures = {}
    finished = threading.Event()
    lock = threading.Lock()
    remaining = [len(grid)]

    def job_done(event):
        point = tuple(int(p) for p in event.job_id.split(':'))
        with lock:
            if event.exception is not None:
                failures[point] = event.exception
                logger.error(f"❌ Grid point {point} failed: {event.exception}")
            else:
                rows[point] = event.retval
                logger.info(f"📊 Grid point {point}: delta_e={event.retval.delta_e:+.4f}, "
                            f"EDP={event.retval.edp:.4e}")
            remaining[0] -= 1
            if remaining[0] == 0:
                finished.set()

    logger.info(f"🚀 Sweeping {len(grid)} grid points on {config.sweep.workers} workers")
    scheduler = init_scheduler(config.sweep.workers)
    scheduler.add_listener(job_done, EVENT_JOB_EXECUTED | EVENT_JOB_ERROR)
    scheduler.start()
    try:
        for w, u, q, seed in grid:
            scheduler.add_job(
                func=run_point,
                trigger='date',
                run_date=datetime.now(),
                args=(config, splits, baselines[seed], w, u, q, seed, out_dir),
                id=f"{w}:{u}:{q}:{seed}",
                name=f"Grid point w={w} u={u} q={q} seed={seed}",
                misfire_grace_time=None,
            )
        if grid:
            finished.wait()
    finally:
        scheduler.shutdown(wait=True)

    ordered = [rows[point] for point in sorted(rows)]
    if out_dir:
        write_sweep_csv(ordered, os.path.join(out_dir, SWEEP_CSV))
    if failures:
        raise SweepError(failures, ordered)

    logger.info(f"✅ Sweep finished: {len(ordered)} rows")
    return ordered


def write_sweep_csv(rows, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow([f.name for f in fields(SweepRow)])
        for row in sorted(rows, key=lambda r: r.key):
            writer.writerow([repr(v) for v in astuple(row)])
    logger.info(f"💾 Wrote {len(rows)} sweep rows to {path}")
    return path


def read_sweep_csv(path):
    kinds = {f.name: f.type for f in fields(SweepRow)}
    rows = []
    with open(path, newline='') as f:
        for record in csv.DictReader(f):
            values = {}
            for name, kind in kinds.items():
                text = record[name]
                if kind is bool:
                    values[name] = text == 'True'
                elif kind is int:
                    values[name] = int(text)
                else:
                    values[name] = float(text)
            rows.append(SweepRow(**values))
    return rows
