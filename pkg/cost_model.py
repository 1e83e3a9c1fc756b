"""
Area, power and timing constants of the accelerator and their composition

Default block figures are the 64-row / 64x64-table reference point. With
scale_with_codebook set, crossbar cost follows w*u, the activation AM follows
q and the encoder AM follows the next layer's u.
"""
import logging
import math
from dataclasses import asdict, dataclass, fields, replace

from dotenv import dotenv_values

from validators import (
    ValidationError,
    validate_bool,
    validate_existing_path,
    validate_positive_int,
    validate_real,
)

logger = logging.getLogger(__name__)

REFERENCE_TABLE_CELLS = 64 * 64

# Published efficiency (GOP/s/mm2, GOP/s/W)
REFERENCE_EFFICIENCY = {
    'RAPIDNN': (1904.6, 839.1),
    'ISAAC': (479.0, 380.7),
    'PipeLayer': (1485.1, 142.9),
}

# 4x4 max pooling: area um2, latency ns, energy fJ
NDCAM_POOLING = {'area_um2': 24.0, 'latency_ns': 0.5, 'energy_fj': 920.0}
CMOS_POOLING = {'area_um2': 374.0, 'latency_ns': 1.2, 'energy_fj': 378.0}

PUBLISHED_CHIP_AREA_MM2 = 124.1
PUBLISHED_CHIP_POWER_TABLE_W = 310.4
PUBLISHED_CHIP_POWER_TEXT_W = 155.3
PUBLISHED_RNA_AREA_UM2 = 3841.0

# Published shares (percent)
PUBLISHED_ENERGY_SHARES = {'accumulation_fc': 77.1, 'accumulation_conv': 81.4, 'pooling': 3.2, 'other': 11.2}
PUBLISHED_TIME_SHARES = {'pooling': 1.9, 'other': 14.8}
PUBLISHED_AREA_SHARES = {'rna': 56.7, 'memory': 38.2, 'buffer_controller': 5.1}


@dataclass(frozen=True)
class RnaCostModel:
    crossbar_area_um2: float = 3136.0
    crossbar_power_mw: float = 3.7
    counter_area_um2: float = 538.6
    counter_power_mw: float = 0.7
    counter_bits: int = 12
    activation_am_area_um2: float = 83.2
    activation_am_power_mw: float = 0.2
    activation_am_rows: int = 64
    encoder_am_area_um2: float = 83.2
    encoder_am_power_mw: float = 0.2
    encoder_am_rows: int = 64
    rnas_per_tile: int = 1000
    buffer_area_um2: float = 37.6
    buffer_power_mw: float = 2.8
    controller_area_um2: float = 38962.4
    tiles: int = 32
    clock_ghz: float = 1.0
    nor_cycles: int = 1
    adder_stage_cycles: int = 13
    operand_bits: int = 32
    cam_stage_bits: int = 8
    cam_search_ns: float = 0.5
    scale_with_codebook: bool = True

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type is bool:
                continue
            if f.type is int:
                validate_positive_int(f"cost.{f.name}", value)
            else:
                validate_real(f"cost.{f.name}", value, minimum=0.0)
        if self.clock_ghz <= 0:
            raise ValidationError("cost.clock_ghz must be positive")
        if self.operand_bits % self.cam_stage_bits:
            raise ValidationError("cost.operand_bits must be a multiple of cost.cam_stage_bits")

    @property
    def cycle_ns(self):
        return 1.0 / self.clock_ghz

    @property
    def cam_search_cycles(self):
        """Clock cycles one AM search occupies"""
        return max(1, math.ceil(self.cam_search_ns * self.clock_ghz - 1e-12))

    @property
    def counter_max(self):
        return 2 ** self.counter_bits - 1

    @property
    def capacity_rnas(self):
        return self.tiles * self.rnas_per_tile

    def _scales(self, w=None, u=None, q=None, u_next=None):
        if not self.scale_with_codebook:
            return 1.0, 1.0, 1.0
        crossbar = (w * u) / REFERENCE_TABLE_CELLS if w and u else 1.0
        activation = q / self.activation_am_rows if q else 1.0
        encoder = u_next / self.encoder_am_rows if u_next else 1.0
        return crossbar, activation, encoder

    def block_areas(self, w=None, u=None, q=None, u_next=None):
        """RNA sub-block areas in um2"""
        crossbar, activation, encoder = self._scales(w, u, q, u_next)
        return {
            'crossbar': self.crossbar_area_um2 * crossbar,
            'counter': self.counter_area_um2,
            'activation_am': self.activation_am_area_um2 * activation,
            'encoder_am': self.encoder_am_area_um2 * encoder,
        }

    def block_powers(self, w=None, u=None, q=None, u_next=None):
        """RNA sub-block active power in mW"""
        crossbar, activation, encoder = self._scales(w, u, q, u_next)
        return {
            'crossbar': self.crossbar_power_mw * crossbar,
            'counter': self.counter_power_mw,
            'activation_am': self.activation_am_power_mw * activation,
            'encoder_am': self.encoder_am_power_mw * encoder,
        }

    def rna_area_um2(self, **sizes):
        return math.fsum(self.block_areas(**sizes).values())

    def rna_power_mw(self, **sizes):
        return math.fsum(self.block_powers(**sizes).values())

    def tile_area_um2(self, **sizes):
        return math.fsum([self.rnas_per_tile * self.rna_area_um2(**sizes),
                          self.buffer_area_um2, self.controller_area_um2])

    def tile_power_mw(self, **sizes):
        return math.fsum([self.rnas_per_tile * self.rna_power_mw(**sizes), self.buffer_power_mw])

    def chip_area_mm2(self, **sizes):
        return self.tiles * self.tile_area_um2(**sizes) / 1e6

    def chip_power_w(self, **sizes):
        return self.tiles * self.tile_power_mw(**sizes) / 1e3

    def area_breakdown(self, **sizes):
        """Chip area per block class in mm2"""
        per_rna = self.block_areas(**sizes)
        rnas = self.tiles * self.rnas_per_tile
        parts = {name: rnas * area / 1e6 for name, area in per_rna.items()}
        parts['buffer'] = self.tiles * self.buffer_area_um2 / 1e6
        parts['controller'] = self.tiles * self.controller_area_um2 / 1e6
        return parts

    def to_dict(self):
        return asdict(self)


def _coerce(name, value, kind):
    if kind is bool:
        return validate_bool(f"cost.{name}", value)
    if kind is int:
        return validate_positive_int(f"cost.{name}", value)
    return validate_real(f"cost.{name}", value, minimum=0.0)


def load_cost_model(path=None, overrides=None):
    """Table constants, optionally overridden by a key = value file and then by overrides"""
    values = {}
    if path:
        validate_existing_path('cost.file', path)
        for key, value in dotenv_values(path).items():
            if value is None:
                continue
            values[key[len('cost.'):] if key.startswith('cost.') else key] = value
        logger.info(f"📊 Loaded {len(values)} cost overrides from {path}")
    values.update(overrides or {})

    known = {f.name: f.type for f in fields(RnaCostModel)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValidationError(f"Unknown cost keys: {', '.join(unknown)}")

    model = RnaCostModel()
    if values:
        model = replace(model, **{name: _coerce(name, value, known[name]) for name, value in values.items()})
    return model
