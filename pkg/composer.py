"""
Reinterpretation of a trained network into lookup-table form

Pipeline per iteration: cluster weights and sampled neuron inputs into
codebook trees, pre-compute product tables and activation LUTs, estimate the
clustered error on the validation split, and retrain from the clustered
weights while the error gap exceeds the tolerance.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from activation import LUT_KINDS, quantize_activation
from clustering import build_tree
from lut_inference import decoded_weights, lut_error
from models import Codebook, ComposedLayer, ReinterpretedModel
from network import evaluate, forward, train
from validators import ValidationError, validate_fraction

logger = logging.getLogger(__name__)

TABLE_ENTRY_BYTES = 4
LUT_ROW_BYTES = 8
CODEBOOK_ENTRY_BYTES = 4


@dataclass
class IterationRecord:
    iteration: int
    e_clustered: float
    e_baseline: float
    retrained: bool = False

    @property
    def delta(self):
        return self.e_clustered - self.e_baseline

    def to_dict(self):
        return {
            'iteration': self.iteration,
            'e_clustered': self.e_clustered,
            'e_baseline': self.e_baseline,
            'delta_e': self.delta,
        }


@dataclass
class ReinterpretReport:
    iterations: list = field(default_factory=list)
    best_iteration: int = 0
    converged: bool = False
    memory_bytes: int = 0

    @property
    def best(self):
        return self.iterations[self.best_iteration - 1]

    @property
    def delta_e(self):
        return self.best.delta

    def to_dict(self):
        return {
            'iterations': [r.to_dict() for r in self.iterations],
            'iterations_used': len(self.iterations),
            'best_iteration': self.best_iteration,
            'converged': self.converged,
            'delta_e': self.delta_e,
            'memory_bytes': self.memory_bytes,
        }

    @classmethod
    def from_dict(cls, data):
        records = [IterationRecord(r['iteration'], r['e_clustered'], r['e_baseline'])
                   for r in data.get('iterations', [])]
        for record in records[:-1]:
            record.retrained = True
        return cls(iterations=records, best_iteration=data['best_iteration'],
                   converged=data['converged'], memory_bytes=data['memory_bytes'])


class ReinterpretResult(NamedTuple):
    model: ReinterpretedModel
    report: ReinterpretReport


def cluster_weights(net, layer_index, w, seed=0, tree_depth=6, n_init=1):
    """Weight trees and their w-entry codebooks: one per FC layer, one per conv output channel"""
    layer = net.layers[layer_index]
    if not layer.has_weights:
        raise ValidationError(f"Layer {layer_index} ({layer.kind}) has no weights to cluster")
    if w > 2 ** tree_depth:
        raise ValidationError(f"w={w} needs a tree deeper than {tree_depth}")

    weights = net.weights[layer_index]
    groups = [weights] if layer.kind == 'fully_connected' else list(weights)
    rng = np.random.default_rng(seed)

    trees = [build_tree(group, tree_depth, seed=int(rng.integers(2 ** 31 - 1)), n_init=n_init) for group in groups]
    return trees, [tree.codebook(w) for tree in trees]


def sample_indices(num_samples, fraction, seed=0):
    validate_fraction('sample_fraction', fraction)
    if num_samples == 0:
        raise ValidationError("Cannot sample inputs from an empty dataset")
    count = max(1, int(math.ceil(fraction * num_samples)))
    if count >= num_samples:
        return np.arange(num_samples)
    return np.sort(np.random.default_rng(seed).choice(num_samples, size=count, replace=False))


def sample_forward(net, data, fraction=0.02, seed=0):
    """Forward pass over a seeded subset of the training data"""
    idx = sample_indices(len(data), fraction, seed)
    return forward(net, data.samples[idx])


def sample_inputs(net, train_data, layer_index, fraction=0.02, seed=0):
    """Input activations of one layer under seeded subsampling (theta)"""
    if not 1 <= layer_index < len(net.layers):
        raise ValidationError(f"Layer index {layer_index} is outside 1..{len(net.layers) - 1}")
    theta = sample_forward(net, train_data, fraction, seed).activations[layer_index - 1].ravel()
    if theta.size == 0:
        raise ValidationError(f"No input samples for layer {layer_index}")
    return theta


def product_tables(weight_codebooks, input_codebook):
    """G x w x u tables of weight centroid times input centroid"""
    return np.stack([np.multiply.outer(cb.centroids, input_codebook.centroids) for cb in weight_codebooks])


def compose(net, train_data, cfg):
    """One reinterpretation of net with the codebook sizes in cfg"""
    sampled = sample_forward(net, train_data, cfg.sample_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    last = len(net.layers) - 1
    layers = []

    for i, spec in enumerate(net.layers[1:], start=1):
        layer = ComposedLayer(index=i, spec=spec)
        owns_codebook = spec.has_weights or (spec.kind == 'pooling' and spec.pool_mode == 'avg')

        if owns_codebook:
            theta = sampled.activations[i - 1].ravel()
            layer.input_tree = build_tree(theta, cfg.tree_depth, seed=int(rng.integers(2 ** 31 - 1)))
            layer.input_size = cfg.u

        if spec.has_weights:
            trees, codebooks = cluster_weights(net, i, cfg.w, seed=int(rng.integers(2 ** 31 - 1)),
                                               tree_depth=cfg.tree_depth)
            weights = net.weights[i]
            layer.weight_trees = trees
            layer.weight_codebooks = codebooks
            if spec.kind == 'fully_connected':
                layer.weight_codes = codebooks[0].encode(weights)
            else:
                layer.weight_codes = np.stack([cb.encode(wm) for cb, wm in zip(codebooks, weights)])
            layer.product_tables = product_tables(codebooks, layer.input_codebook)
            layer.bias = net.biases[i].copy()
        elif owns_codebook:
            # Average pooling: division folded into a normalized 1 x u table
            layer.weight_codebooks = [Codebook([1.0 / spec.fan_in])]
            layer.product_tables = product_tables(layer.weight_codebooks, layer.input_codebook)

        if owns_codebook and i != last:
            if cfg.relu_comparator and spec.activation == 'relu':
                layer.relu_comparator = True
            elif spec.activation in LUT_KINDS and spec.activation != 'none':
                layer.activation_lut = quantize_activation(spec.activation, cfg.q, sampled.preactivations[i],
                                                           placement=cfg.placement)

        layers.append(layer)

    rm = ReinterpretedModel(input_dims=net.input_dims, layers=layers, w=cfg.w, u=cfg.u, q=cfg.q,
                            tree_depth=cfg.tree_depth, frac_bits=cfg.frac_bits)
    logger.debug(f"🔧 Composed model w={cfg.w} u={cfg.u} q={cfg.q} over {len(layers)} layers")
    return rm


def snapped_network(net, rm):
    """Copy of net whose weights are replaced by their centroids"""
    snapped = net.copy()
    for layer in rm.layers:
        if layer.spec.has_weights:
            snapped.weights[layer.index] = decoded_weights(layer).astype(np.float64)
    return snapped


def memory_breakdown(rm):
    """Per-layer bytes: product tables, codebooks, activation LUT, encoder rows"""
    rows = []
    if not rm.layers:
        return rows

    rows.append({'layer': 'virtual', 'tables': 0, 'codebooks': 0, 'activation': 0,
                 'encoding': len(rm.virtual_codebook) * CODEBOOK_ENTRY_BYTES})

    last = len(rm.layers) - 1
    for pos, layer in enumerate(rm.layers):
        tables = int(layer.product_tables.size) * TABLE_ENTRY_BYTES if layer.product_tables is not None else 0
        codebooks = sum(len(cb) for cb in layer.weight_codebooks) if layer.spec.has_weights else 0
        if layer.owns_input_codebook:
            codebooks += len(layer.input_codebook)
        activation = len(layer.activation_lut) * LUT_ROW_BYTES if layer.activation_lut is not None else 0
        encoding = 0
        if layer.is_accumulating and pos != last:
            encoding = len(rm.encoding_codebook(pos)) * CODEBOOK_ENTRY_BYTES
        rows.append({
            'layer': f"{layer.index}:{layer.spec.kind}",
            'tables': tables,
            'codebooks': codebooks * CODEBOOK_ENTRY_BYTES,
            'activation': activation,
            'encoding': encoding,
        })

    for row in rows:
        row['total'] = row['tables'] + row['codebooks'] + row['activation'] + row['encoding']
    return rows


def model_memory_bytes(rm):
    return sum(row['total'] for row in memory_breakdown(rm))


def reinterpret(net, splits, cfg, train_cfg):
    """Cluster, estimate and retrain until the error gap is within cfg.epsilon.

    Returns the model of the iteration with the smallest gap; a loop that runs
    out of iterations is flagged, not failed.
    """
    if len(splits.validation) == 0:
        raise ValidationError("Reinterpretation needs a labeled validation split")

    e_baseline = evaluate(net, splits.validation)
    report = ReinterpretReport()
    best_model = None
    current = net

    logger.info(f"🚀 Reinterpreting with w={cfg.w}, u={cfg.u}, q={cfg.q}, epsilon={cfg.epsilon}, "
                f"baseline error {e_baseline:.4f}")

    for iteration in range(1, cfg.max_iters + 1):
        rm = compose(current, splits.train, cfg)
        record = IterationRecord(iteration, lut_error(rm, splits.validation, oracle=True), e_baseline)
        report.iterations.append(record)
        logger.info(f"📊 Iteration {iteration}: e_clustered={record.e_clustered:.4f}, delta_e={record.delta:+.4f}")

        if best_model is None or record.delta < report.best.delta:
            best_model = rm
            report.best_iteration = iteration

        if record.delta <= cfg.epsilon:
            report.converged = True
            break
        if iteration == cfg.max_iters:
            break

        retrain_cfg = replace(train_cfg, epochs=cfg.retrain_epochs, seed=cfg.seed + iteration)
        current = train(snapped_network(current, rm), splits.train, retrain_cfg).network
        record.retrained = True

    report.memory_bytes = model_memory_bytes(best_model)
    if report.converged:
        logger.info(f"✅ Converged at iteration {report.best_iteration} with delta_e={report.delta_e:+.4f}")
    else:
        logger.warning(f"⚠️  delta_e stayed above {cfg.epsilon} after {cfg.max_iters} iterations, "
                       f"keeping iteration {report.best_iteration} (delta_e={report.delta_e:+.4f})")

    return ReinterpretResult(model=best_model, report=report)
