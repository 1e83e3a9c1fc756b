"""
Behavioural and cost simulation of the RNA accelerator

The functional path is lut_inference.model_forward; this module wraps it,
re-derives every neuron's Y from its counter values, and charges cycles and
energy per block class: weighted accumulation (crossbar + counters + adder
tree), activation AM, encoding/pooling AM, and other (tile buffers).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from composer import model_memory_bytes
from cost_model import CMOS_POOLING, NDCAM_POOLING, RnaCostModel
from lut_inference import (
    fixed_bias,
    fixed_tables,
    input_patches,
    model_forward,
    pool_windows,
    saturate,
    to_fixed,
)
from models import Dataset
from network import predictions_from_scores
from validators import ValidationError

logger = logging.getLogger(__name__)

ENERGY_CLASSES = ('accumulation', 'activation', 'encoding_pooling', 'other')
NDCAM_MODES = ('oracle', 'staged', 'weighted')
COUNTER_BITS = 12
CAM_QUERY_CHUNK = 16384


class CapacityError(ValidationError):
    """Model needs more RNA blocks than the chip has and sharing is off"""
    pass


class ShiftTerm(NamedTuple):
    shift: int
    sign: int


class CountingResult(NamedTuple):
    counts: np.ndarray
    cycles: int
    saturated: int


class PoolingCost(NamedTuple):
    area_um2: float
    latency_ns: float
    energy_fj: float


def shift_decompose(count, bits=COUNTER_BITS):
    """Signed power-of-two terms summing to count.

    The longest run of two or more set bits (the most significant on a tie)
    becomes +2**(hi+1) - 2**lo; every other set bit is a positive term.
    """
    count = int(count)
    if not 0 <= count < 2 ** bits:
        raise ValidationError(f"Count {count} does not fit a {bits}-bit counter")

    runs = []
    bit = 0
    while bit < bits:
        if count >> bit & 1:
            lo = bit
            while bit < bits and count >> bit & 1:
                bit += 1
            runs.append((lo, bit - 1))
        else:
            bit += 1

    longest = None
    for lo, hi in runs:
        length = hi - lo + 1
        if length >= 2 and (longest is None or length >= longest[1] - longest[0] + 1):
            longest = (lo, hi)

    terms = []
    for lo, hi in runs:
        if (lo, hi) == longest:
            terms.append(ShiftTerm(hi + 1, 1))
            terms.append(ShiftTerm(lo, -1))
        else:
            terms.extend(ShiftTerm(b, 1) for b in range(lo, hi + 1))

    return sorted(terms, key=lambda t: -t.shift)


def apply_shift_terms(terms, value):
    """Sum of sign * (value << shift); equals count * value"""
    return sum((t.sign * (value << t.shift) for t in terms), value * 0)


SHIFT_TERM_COUNTS = np.array([len(shift_decompose(c)) for c in range(2 ** COUNTER_BITS)], dtype=np.int64)

# limits[s]: largest operand count an s-stage 3:2 carry-save tree reduces to two
_TREE_LIMITS = np.array([3 ** s // 2 ** s for s in range(64)], dtype=np.int64)


def tree_stages(k_terms):
    """Smallest s with 3**s >= k * 2**s (0 for k <= 1)"""
    k = np.asarray(k_terms, dtype=np.int64)
    return np.searchsorted(_TREE_LIMITS, np.maximum(k, 1), side='left')


def adder_tree_cycles(k_terms, bit_width=32, stage_cycles=13):
    """Cycles of the in-memory adder tree: 3:2 stages plus a final carry-propagate add"""
    k = np.asarray(k_terms, dtype=np.int64)
    if np.any(k < 0) or bit_width < 1:
        raise ValidationError("adder_tree_cycles needs k >= 0 and a positive bit width")
    cycles = np.where(k > 0, stage_cycles * tree_stages(k) + stage_cycles * bit_width, 0)
    return int(cycles) if cycles.ndim == 0 else cycles


def counting_schedule(weight_codes, input_codes, w, u, counter_bits=COUNTER_BITS):
    """Counter values and cycles for one neuron.

    Input indices wait in one buffer per weight code; each cycle every buffer
    hands one index to its counter row, so cycles equal the fullest buffer.
    """
    weight_codes = np.asarray(weight_codes, dtype=np.int64).ravel()
    input_codes = np.asarray(input_codes, dtype=np.int64).ravel()
    if weight_codes.shape != input_codes.shape:
        raise ValidationError(f"{len(weight_codes)} weight codes but {len(input_codes)} input codes")
    if weight_codes.size == 0:
        return CountingResult(np.zeros((w, u), dtype=np.int64), 0, 0)

    cycles = int(np.bincount(weight_codes, minlength=w).max())
    counts = np.bincount(weight_codes * u + input_codes, minlength=w * u).reshape(w, u)
    limit = 2 ** counter_bits - 1
    saturated = int(np.count_nonzero(counts > limit))
    if saturated:
        logger.warning(f"⚠️  {saturated} counter(s) exceeded {counter_bits} bits and saturated")
        counts = np.minimum(counts, limit)

    return CountingResult(counts, cycles, saturated)


def match_score(query, row, width=32):
    """Bit-weighted match score: each matching bit adds 2**position"""
    mask = (1 << width) - 1
    return ~(int(query) ^ int(row)) & mask


def _check_words(values, width, name):
    values = np.asarray(values, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() >= 2 ** width):
        raise ValidationError(f"{name} must be unsigned {width}-bit words")
    return values


def ndcam_search_many(queries, rows, width=32, mode='oracle', stage_bits=8):
    """Row index returned by the nearest-distance CAM for each query"""
    if mode not in NDCAM_MODES:
        raise ValidationError(f"NDCAM mode must be one of {NDCAM_MODES}, got '{mode}'")
    if width < 1 or width > 62 or width % stage_bits:
        raise ValidationError(f"Word width {width} must be a multiple of the {stage_bits}-bit stage")

    rows = _check_words(rows, width, 'rows').ravel()
    queries = _check_words(queries, width, 'queries').ravel()
    if rows.size == 0:
        raise ValidationError("NDCAM search needs at least one stored row")

    if mode == 'oracle':
        distance = np.abs(rows[None, :] - queries[:, None])
        return np.argmin(distance, axis=1)

    mask = (1 << stage_bits) - 1
    alive = np.ones((len(queries), len(rows)), dtype=bool)
    # 0: prefix equals the query prefix, -1: below it, +1: above it
    relation = np.zeros(alive.shape, dtype=np.int8)

    for shift in range(width - stage_bits, -1, -stage_bits):
        row_field = (rows >> shift) & mask
        query_field = ((queries >> shift) & mask)[:, None]

        if mode == 'weighted':
            score = ~(row_field[None, :] ^ query_field) & mask
            score = np.where(alive, score, -1)
            alive &= score == score.max(axis=1, keepdims=True)
        else:
            target = np.where(relation == 0, query_field, np.where(relation < 0, mask, 0))
            distance = np.where(alive, np.abs(row_field[None, :] - target), mask + 1)
            alive &= distance == distance.min(axis=1, keepdims=True)
            undecided = relation == 0
            relation[undecided] = np.sign(row_field[None, :] - query_field)[undecided]

    return np.argmax(alive, axis=1)


def ndcam_search(query, rows, width=32, mode='oracle', stage_bits=8):
    return int(ndcam_search_many([query], rows, width, mode, stage_bits)[0])


def ndcam_mismatch_rate(rows, width=16, mode='staged', queries=None, stage_bits=8):
    """Fraction of queries where a mode's row is farther than the true nearest row"""
    rows = _check_words(rows, width, 'rows').ravel()
    if queries is None:
        if width > 20:
            raise ValidationError(f"Exhaustive queries over {width}-bit words are too many")
        queries = np.arange(2 ** width, dtype=np.int64)
    queries = np.asarray(queries, dtype=np.int64)

    mismatches = 0
    for start in range(0, len(queries), CAM_QUERY_CHUNK):
        chunk = queries[start:start + CAM_QUERY_CHUNK]
        got = ndcam_search_many(chunk, rows, width, mode, stage_bits)
        best = ndcam_search_many(chunk, rows, width, 'oracle', stage_bits)
        mismatches += int(np.count_nonzero(np.abs(rows[got] - chunk) != np.abs(rows[best] - chunk)))

    return mismatches / len(queries)


def to_cam_word(y_fixed, width=32):
    """Offset-binary word of a signed fixed-point value (order and distance preserving)"""
    return np.asarray(y_fixed, dtype=np.int64) + 2 ** (width - 1)


def pooling_cost(window, rows_per_block=64):
    """NDCAM cost of one max/min pooling search over a window x window region"""
    window = int(window)
    if window < 1:
        raise ValidationError(f"Pooling window must be positive, got {window}")
    if window == 1:
        return PoolingCost(0.0, 0.0, 0.0)
    if window * window > rows_per_block:
        raise ValidationError(f"A {window}x{window} window does not fit a {rows_per_block}-row AM block")
    return PoolingCost(**NDCAM_POOLING)


def cmos_pooling_cost():
    return PoolingCost(**CMOS_POOLING)


@dataclass
class LayerSim:
    position: int
    index: int
    kind: str
    neurons: int
    rnas: int
    passes: int
    counting_cycles: int = 0
    max_terms: int = 0
    latency_cycles: float = 0.0
    max_latency_cycles: int = 0
    counter_saturations: int = 0
    accumulator_saturations: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class SimReport:
    samples: int
    total_cycles: int
    wall_time_s: float
    energy_j: dict
    time_cycles: dict
    area_mm2: float
    area_breakdown: dict
    rna_area_um2: float
    chip_power_w: float
    memory_bytes: int
    throughput_sps: float
    gops: float
    ops_per_sample: int
    rnas_used: int
    layers: list = field(default_factory=list)
    error_rate: float = None
    functional_mismatches: int = 0
    staged_cam_mismatches: int = 0
    cam_queries: int = 0
    scores: np.ndarray = None

    @property
    def total_energy_j(self):
        return math.fsum(self.energy_j.values())

    @property
    def edp(self):
        """Energy-delay product in J*s"""
        return self.total_energy_j * self.wall_time_s

    @property
    def energy_shares(self):
        total = self.total_energy_j
        return {k: (v / total if total else 0.0) for k, v in self.energy_j.items()}

    @property
    def time_shares(self):
        total = sum(self.time_cycles.values())
        return {k: (v / total if total else 0.0) for k, v in self.time_cycles.items()}

    @property
    def average_power_w(self):
        return self.total_energy_j / self.wall_time_s if self.wall_time_s else 0.0

    @property
    def gops_per_mm2(self):
        return self.gops / self.area_mm2 if self.area_mm2 else 0.0

    @property
    def gops_per_w(self):
        power = self.average_power_w
        return self.gops / power if power else 0.0

    def to_dict(self):
        return {
            'samples': self.samples,
            'total_cycles': self.total_cycles,
            'wall_time_s': self.wall_time_s,
            'energy_j': dict(self.energy_j),
            'total_energy_j': self.total_energy_j,
            'energy_shares': self.energy_shares,
            'time_cycles': dict(self.time_cycles),
            'time_shares': self.time_shares,
            'edp_js': self.edp,
            'area_mm2': self.area_mm2,
            'area_breakdown_mm2': dict(self.area_breakdown),
            'rna_area_um2': self.rna_area_um2,
            'chip_power_w': self.chip_power_w,
            'memory_bytes': self.memory_bytes,
            'throughput_sps': self.throughput_sps,
            'gops': self.gops,
            'gops_per_mm2': self.gops_per_mm2,
            'gops_per_w': self.gops_per_w,
            'rnas_used': self.rnas_used,
            'error_rate': self.error_rate,
            'functional_mismatches': self.functional_mismatches,
            'staged_cam_mismatches': self.staged_cam_mismatches,
            'cam_queries': self.cam_queries,
            'layers': [layer.to_dict() for layer in self.layers],
        }


def _neuron_operands(layer, codes):
    """Per-neuron weight codes, input codes, table ids and bias ids for one sample"""
    spec = layer.spec
    if spec.kind == 'pooling':
        windows = pool_windows(codes[None], spec.window)[0].reshape(-1, spec.window ** 2)
        zeros = np.zeros(len(windows), dtype=np.int64)
        return np.zeros_like(windows), windows, zeros, None

    patches = input_patches(spec, codes[None])[0]
    wc = layer.weight_codes.reshape(spec.out_dims[0], -1)
    positions = len(patches)
    channels = np.repeat(np.arange(len(wc)), positions)
    neuron_wc = np.repeat(wc, positions, axis=0)
    neuron_xc = np.tile(patches, (len(wc), 1))
    tables = channels if len(layer.weight_codebooks) > 1 else np.zeros_like(channels)
    return neuron_wc, neuron_xc, tables, channels


def _allocate_rnas(demands, capacity, sharing):
    """RNA blocks per layer; layers that do not accumulate get none"""
    total = sum(demands)
    if total <= capacity:
        return list(demands)
    if not sharing:
        raise CapacityError(f"Model needs {total} RNA blocks but the chip has {capacity}; enable sim.sharing")

    active = sum(1 for n in demands if n)
    if capacity <= active:
        # One block per layer; the layers take turns on the chip
        return [1 if n else 0 for n in demands]
    spare = capacity - active
    return [1 + spare * (n - 1) // (total - active) if n else 0 for n in demands]


def layer_ops(spec):
    """Operations per sample: two per weighted edge, one per pooled input"""
    if spec.has_weights:
        return 2 * spec.neurons * spec.fan_in
    if spec.kind == 'pooling':
        return spec.neurons * spec.fan_in
    return 0


def simulate(rm, workload, cost=None, sharing=False, check_cam=True):
    """Cycles, energy and area of running a workload through the reinterpreted model"""
    cost = cost or RnaCostModel()
    if isinstance(workload, Dataset):
        samples, labels = workload.samples, workload.labels
    else:
        samples, labels = np.asarray(workload, dtype=np.float64), None
    if len(samples) == 0:
        raise ValidationError("simulate needs at least one sample")

    logger.info(f"🚀 Simulating {len(samples)} samples on {cost.tiles} tiles at {cost.clock_ghz} GHz")
    result = model_forward(rm, samples, trace=True)
    frac_bits = rm.frac_bits
    last = len(rm.layers) - 1
    batch = len(samples)
    cycle_s = cost.cycle_ns * 1e-9
    search = cost.cam_search_cycles
    counter_max = cost.counter_max
    term_counts = SHIFT_TERM_COUNTS if cost.counter_bits == COUNTER_BITS else np.array(
        [len(shift_decompose(c, cost.counter_bits)) for c in range(counter_max + 1)], dtype=np.int64)

    demands = [layer.spec.neurons if layer.is_accumulating else 0 for layer in rm.layers]
    rnas = _allocate_rnas(demands, cost.capacity_rnas, sharing)

    latency = np.zeros((batch, len(rm.layers)))
    energy = dict.fromkeys(ENERGY_CLASSES, 0.0)
    time_cycles = dict.fromkeys(ENERGY_CLASSES, 0.0)
    layer_stats = []
    functional_mismatches = 0
    cam_mismatches = 0
    cam_queries = 0

    for pos, (layer, step) in enumerate(zip(rm.layers, result.trace)):
        spec = layer.spec
        stats = LayerSim(pos, layer.index, spec.kind, spec.neurons, rnas[pos],
                         math.ceil(spec.neurons / rnas[pos]) if rnas[pos] else 1,
                         accumulator_saturations=step.saturated)

        if not layer.is_accumulating:
            cost_one = pooling_cost(spec.window)
            cycles = search if cost_one.latency_ns else 0
            latency[:, pos] = cycles
            energy['encoding_pooling'] += batch * spec.neurons * cost_one.energy_fj * 1e-15
            time_cycles['encoding_pooling'] += cycles
            stats.latency_cycles = float(cycles)
            stats.max_latency_cycles = cycles
            layer_stats.append(stats)
            continue

        tables = fixed_tables(layer, frac_bits)
        g, w, u = tables.shape
        flat_tables = tables.reshape(g, w * u)
        bias = fixed_bias(layer, frac_bits)
        lut_rows = len(layer.activation_lut) if layer.activation_lut is not None else None
        next_cb = rm.encoding_codebook(pos)
        powers = cost.block_powers(w=w, u=u, q=lut_rows, u_next=len(next_cb) if next_cb is not None else None)
        accumulate_mw = powers['crossbar'] + powers['counter']

        activation_cycles = search if lut_rows else (cost.nor_cycles if layer.relu_comparator else 0)
        encoding_cycles = search if pos != last else 0

        per_sample_latency = np.zeros(batch)
        accumulation_cycles = 0
        lut_words = None
        if check_cam and lut_rows:
            points, _ = saturate(to_fixed(layer.activation_lut.points, frac_bits))
            lut_words = to_cam_word(points, cost.operand_bits)

        for b in range(batch):
            neuron_wc, neuron_xc, table_ids, bias_ids = _neuron_operands(layer, step.input_codes[b])
            n, fan_in = neuron_xc.shape

            offsets = (np.arange(n, dtype=np.int64) * (w * u))[:, None]
            counts = np.bincount((neuron_wc * u + neuron_xc + offsets).ravel(), minlength=n * w * u).reshape(n, w * u)

            if b == 0:
                occupancy = np.bincount((neuron_wc + (np.arange(n) * w)[:, None]).ravel(), minlength=n * w)
                counting = occupancy.reshape(n, w).max(axis=1)
                stats.counting_cycles = int(counting.max())

            y_check = np.einsum('nk,nk->n', counts, flat_tables[table_ids])
            if bias_ids is not None:
                y_check = y_check + bias[bias_ids]
            y_check, _ = saturate(y_check)
            if not np.array_equal(y_check, step.y_fixed[b].ravel()):
                functional_mismatches += 1

            over = counts > counter_max
            stats.counter_saturations += int(np.count_nonzero(over))
            terms = term_counts[np.minimum(counts, counter_max)].sum(axis=1)
            stats.max_terms = max(stats.max_terms, int(terms.max()))
            adder = adder_tree_cycles(terms, cost.operand_bits, cost.adder_stage_cycles)

            neuron_acc = counting + adder
            accumulation_cycles += int(neuron_acc.sum())
            per_sample_latency[b] = (int(neuron_acc.max()) + activation_cycles + encoding_cycles) * stats.passes

            if b == 0:
                slowest = int(np.argmax(neuron_acc))
                time_cycles['accumulation'] += int(neuron_acc[slowest]) * stats.passes
                time_cycles['activation'] += activation_cycles * stats.passes
                time_cycles['encoding_pooling'] += encoding_cycles * stats.passes

            if lut_words is not None:
                queries = to_cam_word(step.y_fixed[b].ravel(), cost.operand_bits)
                staged = ndcam_search_many(queries, lut_words, cost.operand_bits, 'staged', cost.cam_stage_bits)
                exact = ndcam_search_many(queries, lut_words, cost.operand_bits, 'oracle', cost.cam_stage_bits)
                cam_mismatches += int(np.count_nonzero(
                    np.abs(lut_words[staged] - queries) != np.abs(lut_words[exact] - queries)))
                cam_queries += len(queries)

        if stats.counter_saturations:
            logger.warning(f"⚠️  Layer {layer.index}: {stats.counter_saturations} counter saturation events")

        neuron_samples = batch * spec.neurons
        energy['accumulation'] += accumulation_cycles * cycle_s * accumulate_mw * 1e-3
        energy['activation'] += neuron_samples * activation_cycles * cycle_s * powers['activation_am'] * 1e-3
        energy['encoding_pooling'] += neuron_samples * encoding_cycles * cycle_s * powers['encoder_am'] * 1e-3

        latency[:, pos] = per_sample_latency
        stats.latency_cycles = float(per_sample_latency.mean())
        stats.max_latency_cycles = int(per_sample_latency.max())
        layer_stats.append(stats)

    # Pipelined: the first sample crosses every layer, later ones leave at the slowest stage's pace
    total_cycles = int(latency[0].sum() + latency[1:].max(axis=1).sum()) if len(rm.layers) else 0
    wall_time = total_cycles * cycle_s
    rnas_used = min(sum(rnas), cost.capacity_rnas)
    tiles_used = max(1, math.ceil(rnas_used / cost.rnas_per_tile))
    energy['other'] = tiles_used * cost.buffer_power_mw * 1e-3 * wall_time

    if functional_mismatches:
        logger.error(f"❌ {functional_mismatches} sample-layer(s) differ between counter sums and the functional path")

    steady = float(latency.max(axis=1).mean()) * cycle_s
    throughput = 1.0 / steady if steady else 0.0
    ops = sum(layer_ops(layer.spec) for layer in rm.layers)
    sizes = {'w': rm.w, 'u': rm.u, 'q': rm.q, 'u_next': rm.u}
    scores = result.scores

    report = SimReport(
        samples=batch,
        total_cycles=total_cycles,
        wall_time_s=wall_time,
        energy_j=energy,
        time_cycles=time_cycles,
        area_mm2=cost.chip_area_mm2(**sizes),
        area_breakdown=cost.area_breakdown(**sizes),
        rna_area_um2=cost.rna_area_um2(**sizes),
        chip_power_w=cost.chip_power_w(**sizes),
        memory_bytes=model_memory_bytes(rm),
        throughput_sps=throughput,
        gops=ops * throughput / 1e9,
        ops_per_sample=ops,
        rnas_used=rnas_used,
        layers=layer_stats,
        error_rate=(float(np.mean(predictions_from_scores(scores) != labels)) if labels is not None else None),
        functional_mismatches=functional_mismatches,
        staged_cam_mismatches=cam_mismatches,
        cam_queries=cam_queries,
        scores=scores,
    )

    logger.info(f"📊 {total_cycles} cycles, {report.total_energy_j:.3e} J, "
                f"accumulation share {report.energy_shares['accumulation']:.1%}")
    return report
