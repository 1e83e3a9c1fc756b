"""
Encoded execution of a reinterpreted model

Weights and neuron inputs travel as codebook indices. A neuron's weighted sum
is the sum of pre-computed product-table cells, accumulated as signed 32-bit
fixed point (frac_bits fractional bits) with saturation. Activations and
re-encoding go through lookup tables. snap_forward is the float oracle: the
same model with every weight and neuron output replaced by its centroid.
"""
import logging
from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from activation import activate
from network import ShapeError, layer_preactivation, pool2d, predictions_from_scores
from validators import ValidationError

logger = logging.getLogger(__name__)

INT32_MIN = -(2 ** 31)
INT32_MAX = 2 ** 31 - 1
EVAL_CHUNK = 512


class NeuronResult(NamedTuple):
    y: float
    z: float
    z_code: Optional[int]
    y_fixed: int
    counts: np.ndarray
    saturated: bool


class LayerTrace(NamedTuple):
    position: int
    input_codes: np.ndarray
    y_fixed: Optional[np.ndarray]
    output_codes: Optional[np.ndarray]
    saturated: int


class InferenceResult(NamedTuple):
    scores: np.ndarray
    trace: Optional[list]


def encode(values, codebook):
    """Code of the nearest centroid; midpoints go to the lower code"""
    return codebook.encode(values)


def to_fixed(values, frac_bits):
    """Round reals to int64 fixed point; callers saturate"""
    return np.rint(np.asarray(values, dtype=np.float64) * float(2 ** frac_bits)).astype(np.int64)


def from_fixed(values, frac_bits):
    return np.asarray(values, dtype=np.float64) / float(2 ** frac_bits)


def saturate(acc):
    """Clip int64 accumulators to int32; returns (values, saturated count)"""
    clipped = np.clip(acc, INT32_MIN, INT32_MAX)
    return clipped, int(np.count_nonzero(clipped != acc))


def fixed_tables(layer, frac_bits):
    tables, hits = saturate(to_fixed(layer.product_tables, frac_bits))
    if hits:
        logger.warning(f"⚠️  Layer {layer.index}: {hits} product-table entries saturated at 32 bits")
    return tables


def fixed_bias(layer, frac_bits):
    if layer.bias is None:
        return None
    bias, hits = saturate(to_fixed(layer.bias, frac_bits))
    if hits:
        logger.warning(f"⚠️  Layer {layer.index}: {hits} bias entries saturated at 32 bits")
    return bias


def count_matrix(weight_codes, input_codes, w, u):
    """counts[i][j]: edges whose weight code is i and input code is j"""
    flat = np.asarray(weight_codes, dtype=np.int64).ravel() * u + np.asarray(input_codes, dtype=np.int64).ravel()
    return np.bincount(flat, minlength=w * u).reshape(w, u)


def apply_activation_lut(layer, y):
    """Z for a non-final layer: LUT lookup, exact ReLU comparator, or identity"""
    if layer.relu_comparator:
        return np.maximum(y, 0.0)
    if layer.activation_lut is not None:
        return layer.activation_lut.lookup(y)
    return activate('none', y)


def neuron_forward(input_codes, weight_codes, product_table, bias=0.0, lut=None, encoding_codebook=None,
                   frac_bits=16, relu_comparator=False):
    """One neuron: counts, fixed-point Y, activated Z and its encoded Z code"""
    input_codes = np.asarray(input_codes, dtype=np.int64).ravel()
    weight_codes = np.asarray(weight_codes, dtype=np.int64).ravel()
    table = np.asarray(product_table, dtype=np.float64)
    if table.ndim != 2:
        raise ShapeError(f"A neuron uses one 2-D product table, got shape {table.shape}")
    if input_codes.shape != weight_codes.shape:
        raise ShapeError(f"{len(weight_codes)} weight codes but {len(input_codes)} input codes")

    w, u = table.shape
    if len(input_codes) and (input_codes.min() < 0 or input_codes.max() >= u
                             or weight_codes.min() < 0 or weight_codes.max() >= w):
        raise ValidationError(f"Codes fall outside the {w}x{u} product table")

    counts = count_matrix(weight_codes, input_codes, w, u)
    table_fx, _ = saturate(to_fixed(table, frac_bits))
    acc = int(np.sum(counts * table_fx)) + int(to_fixed(bias, frac_bits))
    y_fixed, hits = saturate(np.array(acc, dtype=np.int64))
    if hits:
        logger.warning(f"⚠️  Neuron accumulator saturated ({acc} does not fit 32 bits)")

    y = float(from_fixed(y_fixed, frac_bits))
    if relu_comparator:
        z = max(y, 0.0)
    elif lut is not None:
        z = float(lut.lookup(np.array([y]))[0])
    else:
        z = y
    z_code = int(encoding_codebook.encode(np.array([z]))[0]) if encoding_codebook is not None else None

    return NeuronResult(y=y, z=z, z_code=z_code, y_fixed=int(y_fixed), counts=counts, saturated=bool(hits))


def pool_encoded(codes, mode, codebook, source_codebooks=None, frac_bits=16):
    """Pool along the last axis of a code array.

    max/min return codes: the codebook is sorted, so the integer extremum of
    the codes is the code of the extremal value. avg returns Y, accumulated
    through a 1 x u table of centroids pre-divided by the window size.
    """
    if source_codebooks is not None and any(cb != codebook for cb in source_codebooks):
        raise ValidationError("Pooling window mixes codes from different codebooks")

    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= len(codebook)):
        raise ValidationError(f"Codes fall outside a {len(codebook)}-entry codebook")

    if mode == 'max':
        return codes.max(axis=-1)
    if mode == 'min':
        return codes.min(axis=-1)
    if mode == 'avg':
        # Same product as the composed 1 x u table, so both paths round identically
        table, _ = saturate(to_fixed((1.0 / codes.shape[-1]) * codebook.centroids, frac_bits))
        return from_fixed(table[codes].sum(axis=-1), frac_bits)
    raise ValidationError(f"Unknown pooling mode '{mode}'")


def pool_windows(codes, window):
    b, c, h, w = codes.shape
    blocks = codes.reshape(b, c, h // window, window, w // window, window)
    return blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // window, w // window, window * window)


def input_patches(spec, codes):
    """(B, positions, fan_in) input codes seen by each output neuron group"""
    if spec.kind == 'fully_connected':
        return codes.reshape(len(codes), 1, -1)
    k = spec.kernel
    windows = sliding_window_view(codes, (k, k), axis=(2, 3))
    b, c, oh, ow = windows.shape[:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * k * k)


def accumulate(layer, codes, frac_bits):
    """Fixed-point Y of a weighted layer for a batch of input codes"""
    spec = layer.spec
    tables = fixed_tables(layer, frac_bits).astype(np.float64)
    patches = input_patches(spec, codes)
    b, positions, fan_in = patches.shape

    wc = layer.weight_codes.reshape(spec.out_dims[0], -1)
    if len(layer.weight_codebooks) == 1:
        table_index = np.zeros(len(wc), dtype=np.int64)
    else:
        table_index = np.arange(len(wc), dtype=np.int64)

    flat = patches.reshape(b * positions, fan_in)
    acc = np.zeros((b * positions, len(wc)))
    for j in range(tables.shape[2]):
        hits = flat == j
        if not hits.any():
            continue
        # Integer-valued float64 sums stay exact well below 2**53
        column = tables[table_index[:, None], wc, j]
        acc += hits.astype(np.float64) @ column.T

    acc = np.rint(acc).astype(np.int64) + fixed_bias(layer, frac_bits)[None, :]
    if spec.kind == 'fully_connected':
        return acc.reshape(b, -1)
    oh, ow = spec.out_dims[1], spec.out_dims[2]
    return acc.reshape(b, oh, ow, -1).transpose(0, 3, 1, 2)


def _as_batch(input_dims, x):
    x = np.asarray(x, dtype=np.float64)
    size = int(np.prod(input_dims))
    if x.shape == tuple(input_dims) or (x.ndim == 1 and x.size == size):
        return x.reshape((1,) + tuple(input_dims))
    if x.ndim >= 2 and int(np.prod(x.shape[1:])) == size:
        return x.reshape((len(x),) + tuple(input_dims))
    raise ShapeError(f"Input shape {x.shape} does not match the virtual layer dims {tuple(input_dims)}")


def model_forward(rm, x, trace=False):
    """Class scores of the reinterpreted model, computed in the encoded domain"""
    batch = _as_batch(rm.input_dims, x)
    codes = rm.virtual_codebook.encode(batch)
    frac_bits = rm.frac_bits
    steps = [] if trace else None
    last = len(rm.layers) - 1
    scores = None

    for pos, layer in enumerate(rm.layers):
        spec = layer.spec
        y_fixed = None
        saturated = 0
        inputs = codes

        if spec.kind == 'pooling' and spec.pool_mode in ('max', 'min'):
            codes = pool_encoded(pool_windows(codes, spec.window), spec.pool_mode, rm.input_codebook(pos))
        else:
            if spec.kind == 'pooling':
                y = pool_encoded(pool_windows(codes, spec.window), 'avg', rm.input_codebook(pos),
                                 frac_bits=frac_bits)
                y_fixed, saturated = saturate(to_fixed(y, frac_bits))
            else:
                y_fixed, saturated = saturate(accumulate(layer, codes, frac_bits))
            if saturated:
                logger.warning(f"⚠️  Layer {layer.index}: {saturated} accumulators saturated at 32 bits")

            y = from_fixed(y_fixed, frac_bits)
            if pos == last:
                scores = activate(spec.activation, y)
                codes = None
            else:
                codes = rm.encoding_codebook(pos).encode(apply_activation_lut(layer, y))

        if trace:
            steps.append(LayerTrace(pos, inputs, y_fixed, codes, saturated))

    return InferenceResult(scores=scores, trace=steps)


def decoded_weights(layer):
    """Weights snapped to their codebooks, in the network's weight layout"""
    if len(layer.weight_codebooks) == 1:
        return layer.weight_codebooks[0].decode(layer.weight_codes)
    return np.stack([cb.decode(codes) for cb, codes in zip(layer.weight_codebooks, layer.weight_codes)])


def snap_forward(rm, x):
    """Float oracle: snapped weights, snapped neuron outputs, LUT activations"""
    batch = _as_batch(rm.input_dims, x)
    z = rm.virtual_codebook.snap(batch)
    last = len(rm.layers) - 1

    for pos, layer in enumerate(rm.layers):
        spec = layer.spec
        if spec.kind == 'pooling':
            z = pool2d(z, spec.window, spec.pool_mode)
            if spec.pool_mode != 'avg':
                continue
            y = z
        else:
            y = layer_preactivation(spec, decoded_weights(layer), layer.bias, z)

        if pos == last:
            return activate(spec.activation, y)
        z = rm.encoding_codebook(pos).snap(apply_activation_lut(layer, y))

    return z


def lut_error(rm, data, oracle=False):
    """Misclassification rate of the encoded model (or its float oracle)"""
    if len(data) == 0:
        raise ValidationError(f"Cannot evaluate on an empty {data.split} split")

    wrong = 0
    for start in range(0, len(data), EVAL_CHUNK):
        chunk = data.samples[start:start + EVAL_CHUNK]
        scores = snap_forward(rm, chunk) if oracle else model_forward(rm, chunk).scores
        wrong += int(np.count_nonzero(predictions_from_scores(scores) != data.labels[start:start + EVAL_CHUNK]))

    return wrong / len(data)
