"""
Activation functions and their quantized lookup tables
"""
import logging
import math

import numpy as np

from models import ActivationLUT
from validators import ValidationError

logger = logging.getLogger(__name__)

SATURATION_TOLERANCE = 1e-4
LOWER_PERCENTILE = 0.1
UPPER_PERCENTILE = 99.9
LUT_KINDS = ('relu', 'sigmoid', 'softsign', 'none')


def sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    e = np.exp(y[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(y):
    shifted = y - np.max(y, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def activate(kind, y):
    """Z = phi(Y); softmax normalizes over axis 1"""
    if kind == 'relu':
        return np.maximum(y, 0.0)
    if kind == 'sigmoid':
        return sigmoid(y)
    if kind == 'softsign':
        return y / (1.0 + np.abs(y))
    if kind == 'softmax':
        return softmax(np.asarray(y, dtype=np.float64))
    if kind == 'none':
        return np.asarray(y, dtype=np.float64)
    raise ValidationError(f"Unknown activation '{kind}'")


def activation_derivative(kind, y, z):
    """dZ/dY elementwise, given both Y and Z"""
    if kind == 'relu':
        return (y > 0).astype(np.float64)
    if kind == 'sigmoid':
        return z * (1.0 - z)
    if kind == 'softsign':
        return 1.0 / (1.0 + np.abs(y)) ** 2
    if kind == 'none':
        return np.ones_like(y)
    raise ValidationError(f"No elementwise derivative for '{kind}'")


def saturation_bounds(kind, tolerance=SATURATION_TOLERANCE):
    """Inputs beyond which phi is within tolerance of its limit, or +-inf"""
    if kind == 'sigmoid':
        edge = math.log((1.0 - tolerance) / tolerance)
        return -edge, edge
    if kind == 'softsign':
        edge = 1.0 / tolerance - 1.0
        return -edge, edge
    if kind == 'relu':
        return 0.0, math.inf
    return -math.inf, math.inf


def lut_domain(kind, observed, tolerance=SATURATION_TOLERANCE):
    """A and B: observed percentiles pulled in to the saturation points"""
    low, high = np.percentile(observed, [LOWER_PERCENTILE, UPPER_PERCENTILE])
    sat_low, sat_high = saturation_bounds(kind, tolerance)
    a = max(float(low), sat_low)
    b = min(float(high), sat_high)
    if b < a:
        b = a
    return a, b


def quantize_activation(kind, q, observed_preacts, placement='quantile', tolerance=SATURATION_TOLERANCE):
    """Build a q-row (y, z) table over [A, B] for one layer's activation"""
    if kind not in LUT_KINDS:
        raise ValidationError(f"No lookup table for activation '{kind}'")
    if int(q) < 2:
        raise ValidationError(f"An activation table needs q >= 2 rows, got {q}")

    observed = np.asarray(observed_preacts, dtype=np.float64).ravel()
    observed = observed[np.isfinite(observed)]
    if observed.size == 0:
        raise ValidationError("quantize_activation needs observed pre-activations")

    a, b = lut_domain(kind, observed, tolerance)

    if placement == 'quantile':
        clipped = np.clip(observed, a, b)
        points = np.quantile(clipped, np.linspace(0.0, 1.0, q))
    elif placement == 'uniform':
        points = np.linspace(a, b, q)
    else:
        raise ValidationError(f"Unknown point placement '{placement}'")

    points[0] = a
    points[-1] = b
    points = np.unique(points)
    if len(points) < q:
        logger.debug(f"📊 {kind} table collapsed from {q} to {len(points)} distinct rows")

    return ActivationLUT(kind=kind, points=points, outputs=activate(kind, points), lower=a, upper=b)
