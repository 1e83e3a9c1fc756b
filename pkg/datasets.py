"""
Dataset loading (IDX, CSV), splitting and small synthetic stand-ins
"""
import csv
import gzip
import logging
import os

import numpy as np

from models import Dataset, DataSplits
from validators import ValidationError, validate_choice, validate_fraction

logger = logging.getLogger(__name__)

IDX_TYPES = {
    0x08: np.dtype('>u1'),
    0x09: np.dtype('>i1'),
    0x0B: np.dtype('>i2'),
    0x0C: np.dtype('>i4'),
    0x0D: np.dtype('>f4'),
    0x0E: np.dtype('>f8'),
}


class ParseError(ValidationError):
    """Malformed dataset file; offset is a byte offset (IDX) or line number (CSV)"""

    def __init__(self, message, path=None, offset=None, unit='byte'):
        where = f" at {unit} {offset}" if offset is not None else ""
        super().__init__(f"{path or 'dataset'}{where}: {message}")
        self.path = path
        self.offset = offset
        self.unit = unit


def _read_bytes(path):
    opener = gzip.open if str(path).endswith('.gz') else open
    with opener(path, 'rb') as f:
        return f.read()


def parse_idx(raw, path=None):
    """Decode an IDX buffer into an ndarray with the declared dims"""
    if len(raw) < 4:
        raise ParseError(f"header needs 4 bytes, file has {len(raw)}", path, 0)
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError(f"bad magic {raw[:4].hex()}: first two bytes must be zero", path, 0)

    type_code, ndim = raw[2], raw[3]
    if type_code not in IDX_TYPES:
        raise ParseError(f"unknown element type 0x{type_code:02X}", path, 2)
    if ndim == 0:
        raise ParseError("IDX files need at least one dimension", path, 3)

    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ParseError(f"header declares {ndim} dims, expected {header_end} bytes, got {len(raw)}", path, 4)

    dims = tuple(int(d) for d in np.frombuffer(raw, dtype='>u4', count=ndim, offset=4))
    dtype = IDX_TYPES[type_code]
    expected = int(np.prod(dims)) * dtype.itemsize
    actual = len(raw) - header_end
    if actual < expected:
        raise ParseError(f"truncated payload: expected {expected} bytes, got {actual}", path, header_end + actual)
    if actual > expected:
        raise ParseError(f"trailing data: expected {expected} bytes, got {actual}", path, header_end + expected)

    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header_end)
    return data.reshape(dims).astype(dtype.newbyteorder('='))


def read_idx(path):
    return parse_idx(_read_bytes(path), path)


def read_csv(path):
    """Rows of 'label,feature,...'; returns (features, labels)"""
    features = []
    labels = []
    width = None

    with open(path, newline='') as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                label = int(row[0].strip())
                values = [float(cell) for cell in row[1:]]
            except ValueError:
                raise ParseError(f"row must be an integer label followed by numbers: {','.join(row)[:60]!r}",
                                 path, line_no, unit='line')
            if not values:
                raise ParseError("row has a label but no features", path, line_no, unit='line')
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(f"expected {width} features, got {len(values)}", path, line_no, unit='line')
            labels.append(label)
            features.append(values)

    if not labels:
        raise ParseError("no data rows", path)

    return np.array(features, dtype=np.float64), np.array(labels, dtype=np.int64)


def load_dataset(path, format, labels_path=None, shape=None, split='train', normalize=True, limit=None):
    """Load one split; IDX byte images are scaled to [0, 1] when normalize is set"""
    fmt = validate_choice('format', format, ('idx', 'csv'))
    if not os.path.exists(path):
        raise ValidationError(f"Dataset file not found: {path}")

    if fmt == 'idx':
        if not labels_path:
            raise ValidationError("IDX datasets need a separate labels file")
        raw = read_idx(path)
        samples = raw.astype(np.float64)
        if normalize and raw.dtype == np.uint8:
            samples /= 255.0
        labels = read_idx(labels_path).astype(np.int64).ravel()
    else:
        samples, labels = read_csv(path)

    if len(samples) != len(labels):
        raise ValidationError(f"{path}: {len(samples)} samples but {len(labels)} labels")
    if np.any(labels < 0):
        raise ValidationError(f"{path}: labels must be non-negative")

    if limit:
        samples, labels = samples[:limit], labels[:limit]

    if shape:
        samples = samples.reshape((len(samples),) + tuple(shape))
    else:
        samples = samples.reshape(len(samples), -1)

    logger.info(f"📊 Loaded {len(labels)} {split} samples of shape {samples.shape[1:]} from {os.path.basename(path)}")
    return Dataset(samples, labels, split=split)


def split_dataset(data, validation_fraction, seed=0, test=None):
    """Seeded train/validation split; test split is passed through"""
    validate_fraction('validation_fraction', validation_fraction, include_one=False)
    if len(data) < 2:
        raise ValidationError("Need at least two samples to split off a validation set")

    order = np.random.default_rng(seed).permutation(len(data))
    n_val = min(len(data) - 1, max(1, int(round(validation_fraction * len(data)))))

    num_classes = max(data.num_classes, test.num_classes if test is not None else 0)
    train = Dataset(data.samples[order[n_val:]], data.labels[order[n_val:]], 'train', num_classes)
    validation = Dataset(data.samples[order[:n_val]], data.labels[order[:n_val]], 'validation', num_classes)
    if test is not None:
        test = Dataset(test.samples, test.labels, 'test', num_classes)

    return DataSplits(train=train, validation=validation, test=test)


def synthetic_dataset(num_samples, dims, num_classes, seed=0, noise=0.3, split='train'):
    """Noisy copies of seeded class prototypes; a desk-scale stand-in for image data"""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    prototypes = rng.uniform(0.0, 1.0, size=(num_classes,) + dims)
    labels = rng.integers(0, num_classes, size=num_samples)
    samples = prototypes[labels] + noise * rng.standard_normal((num_samples,) + dims)
    return Dataset(samples, labels, split=split, num_classes=num_classes)


def downscale(data, size):
    """Block-average (N, C, H, W) or (N, H, W) images to size x size"""
    samples = data.samples
    if samples.ndim not in (3, 4):
        raise ValidationError(f"downscale needs image samples, got shape {samples.shape}")

    squeeze = samples.ndim == 3
    if squeeze:
        samples = samples[:, None]

    n, c, h, w = samples.shape
    if h % size or w % size:
        raise ValidationError(f"Cannot block-average {h}x{w} images down to {size}x{size}")

    fh, fw = h // size, w // size
    small = samples.reshape(n, c, size, fh, size, fw).mean(axis=(3, 5))
    if squeeze:
        small = small[:, 0]

    return Dataset(small, data.labels, split=data.split, num_classes=data.num_classes)


def load_experiment_data(dataset_cfg, seed=0):
    """Train/validation/test splits described by a DatasetConfig"""
    data = load_dataset(dataset_cfg.path, dataset_cfg.format, dataset_cfg.labels,
                        dataset_cfg.shape, split='train', limit=dataset_cfg.limit)
    test = None
    if dataset_cfg.test_path:
        test = load_dataset(dataset_cfg.test_path, dataset_cfg.format, dataset_cfg.test_labels,
                            dataset_cfg.shape, split='test')
    if dataset_cfg.downscale:
        data = downscale(data, dataset_cfg.downscale)
        test = downscale(test, dataset_cfg.downscale) if test is not None else None
    return split_dataset(data, dataset_cfg.validation_fraction, seed=seed, test=test)
