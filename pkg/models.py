"""
Domain entities: networks, datasets, codebooks and reinterpreted models
"""
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from validators import ValidationError

LAYER_KINDS = ('input', 'fully_connected', 'convolution', 'pooling')
POOL_MODES = ('max', 'min', 'avg')
ACTIVATION_KINDS = ('relu', 'sigmoid', 'softsign', 'softmax', 'none')
SPLITS = ('train', 'validation', 'test')


def format_real(value):
    """Decimal text that round-trips a float64 exactly"""
    return format(float(value), '.17g')


def nearest_index(points, values):
    """Index of the nearest sorted point for each value; ties go to the lowest index"""
    points = np.asarray(points)
    values = np.asarray(values)
    last = len(points) - 1

    right = np.clip(np.searchsorted(points, values, side='left'), 0, last)
    left = np.clip(right - 1, 0, last)
    d_left = np.abs(values - points[left])
    d_right = np.abs(points[right] - values)
    chosen = np.where(d_left <= d_right, left, right)

    # Duplicate points resolve to their first occurrence
    return np.searchsorted(points, points[chosen], side='left')


@dataclass
class LayerSpec:
    kind: str
    in_dims: tuple
    out_dims: tuple
    kernel: Optional[int] = None
    pool_mode: Optional[str] = None
    activation: str = 'none'

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"Unknown layer kind '{self.kind}'")
        if self.activation not in ACTIVATION_KINDS:
            raise ValidationError(f"Unknown activation '{self.activation}'")
        if (self.kernel is not None) != (self.kind == 'convolution'):
            raise ValidationError(f"Kernel size is defined for convolution layers only ({self.kind})")
        if self.kind == 'pooling' and self.pool_mode not in POOL_MODES:
            raise ValidationError(f"Pooling mode must be one of {POOL_MODES}")
        self.in_dims = tuple(int(d) for d in self.in_dims)
        self.out_dims = tuple(int(d) for d in self.out_dims)

    @property
    def has_weights(self):
        return self.kind in ('fully_connected', 'convolution')

    @property
    def neurons(self):
        return int(np.prod(self.out_dims)) if self.kind != 'input' else 0

    @property
    def fan_in(self):
        """Incoming edges per neuron"""
        if self.kind == 'fully_connected':
            return int(np.prod(self.in_dims))
        if self.kind == 'convolution':
            return self.in_dims[0] * self.kernel * self.kernel
        if self.kind == 'pooling':
            return self.window * self.window
        return 0

    @property
    def window(self):
        """Pooling window edge, implied by the input/output dims"""
        if self.kind != 'pooling':
            return None
        return self.in_dims[1] // self.out_dims[1]

    @property
    def weight_shape(self):
        if self.kind == 'fully_connected':
            return (self.out_dims[0], int(np.prod(self.in_dims)))
        if self.kind == 'convolution':
            return (self.out_dims[0], self.in_dims[0], self.kernel, self.kernel)
        return None

    def to_dict(self):
        return {
            'kind': self.kind,
            'in_dims': list(self.in_dims),
            'out_dims': list(self.out_dims),
            'kernel': self.kernel,
            'pool_mode': self.pool_mode,
            'activation': self.activation,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            kind=data['kind'],
            in_dims=tuple(data['in_dims']),
            out_dims=tuple(data['out_dims']),
            kernel=data.get('kernel'),
            pool_mode=data.get('pool_mode'),
            activation=data.get('activation', 'none'),
        )


@dataclass
class Network:
    layers: list
    weights: list
    biases: list

    @property
    def input_dims(self):
        return self.layers[0].out_dims

    @property
    def num_outputs(self):
        return self.layers[-1].neurons

    def compute_layers(self):
        """Indices of layers that carry weights"""
        return [i for i, layer in enumerate(self.layers) if layer.has_weights]

    def copy(self):
        return Network(
            layers=list(self.layers),
            weights=[None if w is None else w.copy() for w in self.weights],
            biases=[None if b is None else b.copy() for b in self.biases],
        )

    def to_dict(self):
        return {
            'layers': [layer.to_dict() for layer in self.layers],
            'parameters': sum(w.size + b.size for w, b in zip(self.weights, self.biases) if w is not None),
        }


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    split: str = 'train'
    num_classes: Optional[int] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(self.samples) != len(self.labels):
            raise ValidationError(
                f"Dataset has {len(self.samples)} samples but {len(self.labels)} labels")
        if self.split not in SPLITS:
            raise ValidationError(f"Split must be one of {SPLITS}, got '{self.split}'")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(f"Labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("Dataset samples must be finite")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_dims(self):
        return tuple(self.samples.shape[1:])

    def subset(self, indices, split=None):
        return Dataset(self.samples[indices], self.labels[indices],
                       split=split or self.split, num_classes=self.num_classes)


class DataSplits(NamedTuple):
    train: Dataset
    validation: Dataset
    test: Optional[Dataset] = None


class Codebook:
    """Sorted centroids; a value's code is the index of its nearest centroid"""

    def __init__(self, centroids, level=None):
        values = np.array(centroids, dtype=np.float64).ravel()
        if values.size == 0:
            raise ValidationError("A codebook needs at least one centroid")
        if not np.all(np.isfinite(values)):
            raise ValidationError("Codebook centroids must be finite")
        if np.any(np.diff(values) < 0):
            raise ValidationError("Codebook centroids must be sorted ascending")
        self.centroids = values
        self.centroids.setflags(write=False)
        self.level = level

    def __len__(self):
        return len(self.centroids)

    def __eq__(self, other):
        return isinstance(other, Codebook) and np.array_equal(self.centroids, other.centroids)

    __hash__ = None

    def __repr__(self):
        return f"Codebook(k={len(self)}, level={self.level})"

    @property
    def width(self):
        """Code width in bits"""
        return math.ceil(math.log2(len(self))) if len(self) > 1 else 0

    @property
    def is_strict(self):
        return bool(np.all(np.diff(self.centroids) > 0))

    def code_string(self, index):
        return format(int(index), f'0{self.width}b') if self.width else ''

    def encode(self, values):
        return nearest_index(self.centroids, values).astype(np.int64)

    def decode(self, codes):
        return self.centroids[np.asarray(codes, dtype=np.int64)]

    def snap(self, values):
        return self.decode(self.encode(values))

    def to_dict(self):
        return {'level': self.level, 'centroids': [format_real(c) for c in self.centroids]}

    @classmethod
    def from_dict(cls, data):
        return cls([float(c) for c in data['centroids']], level=data.get('level'))


@dataclass(eq=False)
class CodebookTree:
    """Codebooks from recursive 2-means; level l holds 2**l centroids"""
    levels: list
    parents: list

    @property
    def depth(self):
        return len(self.levels) - 1

    def level(self, level):
        if not 0 <= level <= self.depth:
            raise ValidationError(f"Tree has levels 0..{self.depth}, asked for {level}")
        return self.levels[level]

    def codebook(self, size):
        """Codebook with `size` centroids (a power of two)"""
        level = int(round(math.log2(size)))
        if 2 ** level != size:
            raise ValidationError(f"Codebook size must be a power of two, got {size}")
        return self.level(level)

    def code(self, level, index):
        return format(int(index), f'0{level}b') if level else ''

    def to_dict(self):
        return {
            'levels': [cb.to_dict() for cb in self.levels],
            'parents': [p.tolist() for p in self.parents],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            levels=[Codebook.from_dict(level) for level in data['levels']],
            parents=[np.asarray(p, dtype=np.int64) for p in data['parents']],
        )


@dataclass(eq=False)
class ActivationLUT:
    """(y, z) rows of a quantized activation; lookup picks the nearest y"""
    kind: str
    points: np.ndarray
    outputs: np.ndarray
    lower: float
    upper: float

    def __len__(self):
        return len(self.points)

    def row(self, y):
        return nearest_index(self.points, y)

    def lookup(self, y):
        return self.outputs[self.row(y)]

    def to_dict(self):
        return {
            'kind': self.kind,
            'lower': format_real(self.lower),
            'upper': format_real(self.upper),
            'points': [format_real(p) for p in self.points],
            'outputs': [format_real(z) for z in self.outputs],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            kind=data['kind'],
            points=np.array([float(p) for p in data['points']]),
            outputs=np.array([float(z) for z in data['outputs']]),
            lower=float(data['lower']),
            upper=float(data['upper']),
        )


@dataclass(eq=False)
class ComposedLayer:
    """One layer of a reinterpreted model"""
    index: int
    spec: LayerSpec
    weight_trees: list = field(default_factory=list)
    weight_codebooks: list = field(default_factory=list)
    weight_codes: Optional[np.ndarray] = None
    product_tables: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    input_tree: Optional[CodebookTree] = None
    input_size: int = 0
    activation_lut: Optional[ActivationLUT] = None
    relu_comparator: bool = False

    @property
    def owns_input_codebook(self):
        return self.input_tree is not None

    @property
    def input_codebook(self):
        return self.input_tree.codebook(self.input_size) if self.input_tree else None

    @property
    def is_accumulating(self):
        """Layers whose neurons run the weighted-accumulation path"""
        return self.spec.has_weights or (self.spec.kind == 'pooling' and self.spec.pool_mode == 'avg')


@dataclass(eq=False)
class ReinterpretedModel:
    input_dims: tuple
    layers: list
    w: int
    u: int
    q: int
    tree_depth: int
    frac_bits: int = 16

    @property
    def weight_level(self):
        return int(round(math.log2(self.w)))

    @property
    def input_level(self):
        return int(round(math.log2(self.u)))

    def input_codebook(self, position):
        """Input codebook of layers[position]; max/min pooling shares the next layer's"""
        for layer in self.layers[position:]:
            if layer.owns_input_codebook:
                return layer.input_codebook
        raise ValidationError(f"No input codebook reachable from layer position {position}")

    def encoding_codebook(self, position):
        """Codebook the encoder of layers[position] targets; None for the final layer"""
        if position + 1 >= len(self.layers):
            return None
        return self.input_codebook(position + 1)

    @property
    def virtual_codebook(self):
        """Codebook of the computation-free input-encoding layer"""
        return self.input_codebook(0)

    def to_dict(self):
        return {
            'input_dims': list(self.input_dims),
            'w': self.w,
            'u': self.u,
            'q': self.q,
            'tree_depth': self.tree_depth,
            'frac_bits': self.frac_bits,
            'layers': [layer.spec.to_dict() for layer in self.layers],
        }
