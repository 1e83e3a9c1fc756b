import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from dotenv import dotenv_values

from cost_model import RnaCostModel, load_cost_model
from validators import (
    ValidationError,
    validate_bool,
    validate_choice,
    validate_dims,
    validate_existing_path,
    validate_fraction,
    validate_int_list,
    validate_positive_int,
    validate_power_of_two,
    validate_real,
)

DATASET_FORMATS = ('idx', 'csv')
PLACEMENTS = ('quantile', 'uniform')
LAYER_ACTIVATIONS = ('relu', 'sigmoid', 'softsign', 'softmax', 'none')


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 10
    dropout_rate: float = 0.5
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        validate_real('train.learning_rate', self.learning_rate, minimum=0.0)
        validate_real('train.momentum', self.momentum, minimum=0.0, maximum=1.0)
        validate_positive_int('train.epochs', self.epochs, allow_zero=True)
        validate_fraction('train.dropout_rate', self.dropout_rate, include_zero=True, include_one=False)
        validate_positive_int('train.batch_size', self.batch_size)


@dataclass(frozen=True)
class ComposeConfig:
    w: int = 64
    u: int = 16
    q: int = 64
    epsilon: float = 0.0
    max_iters: int = 5
    sample_fraction: float = 0.02
    retrain_epochs: int = 1
    seed: int = 0
    tree_depth: int = 6
    placement: str = 'quantile'
    relu_comparator: bool = False
    frac_bits: int = 16

    def __post_init__(self):
        validate_positive_int('compose.tree_depth', self.tree_depth)
        limit = 2 ** self.tree_depth
        validate_power_of_two('compose.w', self.w, maximum=limit)
        validate_power_of_two('compose.u', self.u, maximum=limit)
        validate_power_of_two('compose.q', self.q)
        if self.q < 2:
            raise ValidationError("compose.q must be at least 2")
        validate_real('compose.epsilon', self.epsilon, allow_inf=True)
        validate_positive_int('compose.max_iters', self.max_iters)
        validate_fraction('compose.sample_fraction', self.sample_fraction)
        validate_positive_int('compose.retrain_epochs', self.retrain_epochs, allow_zero=True)
        validate_choice('compose.placement', self.placement, PLACEMENTS)
        validate_real('compose.frac_bits', self.frac_bits, minimum=0, maximum=30)


@dataclass(frozen=True)
class SimConfig:
    samples: int = 100
    sharing: bool = False


@dataclass(frozen=True)
class SweepConfig:
    w: tuple = (4, 16, 64)
    u: tuple = (4, 16, 64)
    q: tuple = (64,)
    seeds: tuple = (0,)
    workers: int = 2

    def grid(self):
        """(w, u, q, seed) points in lexicographic order"""
        return sorted((w, u, q, s) for w in self.w for u in self.u for q in self.q for s in self.seeds)


@dataclass(frozen=True)
class DatasetConfig:
    path: Optional[str] = None
    labels: Optional[str] = None
    format: str = 'csv'
    test_path: Optional[str] = None
    test_labels: Optional[str] = None
    shape: Optional[tuple] = None
    validation_fraction: float = 0.1
    limit: Optional[int] = None
    downscale: Optional[int] = None


@dataclass(frozen=True)
class ModelConfig:
    input_dims: tuple = (784,)
    layers: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    compose: ComposeConfig = field(default_factory=ComposeConfig)
    cost: RnaCostModel = field(default_factory=RnaCostModel)
    sim: SimConfig = field(default_factory=SimConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = 'runs/default'
    source: Optional[str] = None

    def with_seed(self, seed):
        """Pin every seed in the experiment to one value"""
        return replace(
            self,
            train=replace(self.train, seed=seed),
            compose=replace(self.compose, seed=seed),
            sweep=replace(self.sweep, seeds=(seed,)),
        )

    def fingerprint(self, *sections):
        """Digest of the named config sections; artifacts built from them are reusable while it matches"""
        payload = {name: asdict(getattr(self, name)) for name in sections}
        text = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()


def parse_layer_defs(text):
    """Parse 'fc:512:relu, conv:16x3:relu, pool:2:max' into layer definitions"""
    if not text or not str(text).strip():
        raise ValidationError("model.layers must describe at least one layer")

    defs = []
    for raw in str(text).split(','):
        parts = [p.strip().lower() for p in raw.strip().split(':')]
        kind = parts[0]

        if kind == 'fc' and len(parts) in (2, 3):
            defs.append({
                'kind': 'fully_connected',
                'units': validate_positive_int('model.layers fc units', parts[1]),
                'activation': validate_choice('model.layers activation',
                                              parts[2] if len(parts) == 3 else 'none', LAYER_ACTIVATIONS),
            })
        elif kind == 'conv' and len(parts) in (2, 3):
            channels, _, kernel = parts[1].partition('x')
            defs.append({
                'kind': 'convolution',
                'channels': validate_positive_int('model.layers conv channels', channels),
                'kernel': validate_positive_int('model.layers conv kernel', kernel or '3'),
                'activation': validate_choice('model.layers activation',
                                              parts[2] if len(parts) == 3 else 'none', LAYER_ACTIVATIONS),
            })
        elif kind == 'pool' and len(parts) == 3:
            defs.append({
                'kind': 'pooling',
                'window': validate_positive_int('model.layers pool window', parts[1]),
                'mode': validate_choice('model.layers pool mode', parts[2], ('max', 'min', 'avg')),
            })
        else:
            raise ValidationError(f"Cannot parse layer definition '{raw.strip()}'")

    return tuple(defs)


CONFIG_KEYS = frozenset([
    'dataset.path', 'dataset.labels', 'dataset.format', 'dataset.test_path', 'dataset.test_labels',
    'dataset.shape', 'dataset.validation_fraction', 'dataset.limit', 'dataset.downscale',
    'model.input', 'model.layers',
    'train.learning_rate', 'train.momentum', 'train.epochs', 'train.dropout_rate', 'train.batch_size', 'train.seed',
    'compose.w', 'compose.u', 'compose.q', 'compose.epsilon', 'compose.max_iters', 'compose.sample_fraction',
    'compose.retrain_epochs', 'compose.seed', 'compose.tree_depth', 'compose.placement', 'compose.relu_comparator',
    'compose.frac_bits',
    'sim.samples', 'sim.sharing',
    'sweep.w', 'sweep.u', 'sweep.q', 'sweep.seeds', 'sweep.workers',
    'output.dir',
])


def _resolve(base_dir, path):
    if not path:
        return None
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def load_experiment_config(path, seed=None, output_dir=None):
    """Read a key = value experiment file; nothing is exported to the environment"""
    validate_existing_path('config', path)
    values = {k: v for k, v in dotenv_values(path).items() if v is not None}
    base_dir = os.path.dirname(os.path.abspath(path))

    # cost.* keys are checked against RnaCostModel fields
    unknown = sorted(k for k in values if k not in CONFIG_KEYS and not k.startswith('cost.'))
    if unknown:
        raise ValidationError(f"Unknown config keys: {', '.join(unknown)}")

    def get(key, default=None):
        return values.get(key, default)

    fmt = validate_choice('dataset.format', get('dataset.format', 'csv'), DATASET_FORMATS)
    dataset = DatasetConfig(
        path=_resolve(base_dir, get('dataset.path')),
        labels=_resolve(base_dir, get('dataset.labels')),
        format=fmt,
        test_path=_resolve(base_dir, get('dataset.test_path')),
        test_labels=_resolve(base_dir, get('dataset.test_labels')),
        shape=validate_dims('dataset.shape', get('dataset.shape')) if get('dataset.shape') else None,
        validation_fraction=validate_fraction('dataset.validation_fraction',
                                              get('dataset.validation_fraction', '0.1'), include_one=False),
        limit=validate_positive_int('dataset.limit', get('dataset.limit')) if get('dataset.limit') else None,
        downscale=(validate_positive_int('dataset.downscale', get('dataset.downscale'))
                   if get('dataset.downscale') else None),
    )
    for key in ('path', 'labels', 'test_path', 'test_labels'):
        if getattr(dataset, key):
            validate_existing_path(f'dataset.{key}', getattr(dataset, key))
    if not dataset.path:
        raise ValidationError("dataset.path is required")
    if fmt == 'idx' and not dataset.labels:
        raise ValidationError("dataset.labels is required for IDX datasets")

    model = ModelConfig(
        input_dims=validate_dims('model.input', get('model.input', '784')),
        layers=parse_layer_defs(get('model.layers', '')),
    )

    train = TrainConfig(
        learning_rate=validate_real('train.learning_rate', get('train.learning_rate', '0.05')),
        momentum=validate_real('train.momentum', get('train.momentum', '0.9')),
        epochs=validate_positive_int('train.epochs', get('train.epochs', '10'), allow_zero=True),
        dropout_rate=validate_real('train.dropout_rate', get('train.dropout_rate', '0.5')),
        batch_size=validate_positive_int('train.batch_size', get('train.batch_size', '128')),
        seed=validate_positive_int('train.seed', get('train.seed', '0'), allow_zero=True),
    )

    compose = ComposeConfig(
        w=validate_positive_int('compose.w', get('compose.w', '64')),
        u=validate_positive_int('compose.u', get('compose.u', '16')),
        q=validate_positive_int('compose.q', get('compose.q', '64')),
        epsilon=validate_real('compose.epsilon', get('compose.epsilon', '0'), allow_inf=True),
        max_iters=validate_positive_int('compose.max_iters', get('compose.max_iters', '5')),
        sample_fraction=validate_fraction('compose.sample_fraction', get('compose.sample_fraction', '0.02')),
        retrain_epochs=validate_positive_int('compose.retrain_epochs', get('compose.retrain_epochs', '1'),
                                             allow_zero=True),
        seed=validate_positive_int('compose.seed', get('compose.seed', '0'), allow_zero=True),
        tree_depth=validate_positive_int('compose.tree_depth', get('compose.tree_depth', '6')),
        placement=validate_choice('compose.placement', get('compose.placement', 'quantile'), PLACEMENTS),
        relu_comparator=validate_bool('compose.relu_comparator', get('compose.relu_comparator', 'false')),
        frac_bits=validate_positive_int('compose.frac_bits', get('compose.frac_bits', '16'), allow_zero=True),
    )

    cost_overrides = {k[len('cost.'):]: v for k, v in values.items()
                      if k.startswith('cost.') and k != 'cost.file'}
    cost = load_cost_model(_resolve(base_dir, get('cost.file')), overrides=cost_overrides)

    sim = SimConfig(
        samples=validate_positive_int('sim.samples', get('sim.samples', '100')),
        sharing=validate_bool('sim.sharing', get('sim.sharing', 'false')),
    )

    limit = 2 ** compose.tree_depth

    def grid_size(name, text):
        return validate_int_list(name, text, lambda n, v: validate_power_of_two(n, v, maximum=limit))

    sweep = SweepConfig(
        w=tuple(grid_size('sweep.w', get('sweep.w', '4,16,64'))),
        u=tuple(grid_size('sweep.u', get('sweep.u', '4,16,64'))),
        q=tuple(validate_int_list('sweep.q', get('sweep.q', str(compose.q)), validate_power_of_two)),
        seeds=tuple(validate_int_list('sweep.seeds', get('sweep.seeds', str(compose.seed)))),
        workers=validate_positive_int('sweep.workers', get('sweep.workers', '2')),
    )

    config = ExperimentConfig(
        dataset=dataset,
        model=model,
        train=train,
        compose=compose,
        cost=cost,
        sim=sim,
        sweep=sweep,
        output_dir=_resolve(base_dir, get('output.dir', 'runs/default')),
        source=os.path.abspath(path),
    )

    if seed is not None:
        config = config.with_seed(seed)
    if output_dir:
        config = replace(config, output_dir=os.path.abspath(output_dir))

    return config
