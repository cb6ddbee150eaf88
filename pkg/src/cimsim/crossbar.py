"""Analog crossbar tiles: programming, bit-sliced MAC and ADC sensing.

Each tile computes, per input cycle j and row group g, the column sums
sum_r value[r, c] * x_j[r] (current or charge domain, same bilinear form),
subtracts the dummy column, converts to integer codes with a fixed
per-level sensing margin and clips at the ADC full scale. Codes are then
shift-added digitally by cycle significance 2**(j*P_DAC) and slice
significance 2**(i*b_cell).
"""
from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError
from .mapper import PrecisionConfig, TileMap, input_digits, offset_correction
from .noise import DeviceNoiseSpec, NoiseSpec, apply_drift, sample_output_noise

# 22 nm RRAM endpoints: HRS 40 kOhm, LRS 3 kOhm
G_OFF = 1.0 / 40e3
G_ON = 1.0 / 3e3

STREAM_PROGRAM = 0
STREAM_READ = 1


class Domain(str, enum.Enum):
    CURRENT = "current"
    CHARGE = "charge"


@dataclass(frozen=True)
class MemState:
    level: int
    mean: float
    sigma: float = 0.0


@dataclass(frozen=True)
class StateTable:
    """Analog value of every cell state, ascending."""

    states: tuple

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if len(states) < 2 or len(states) & (len(states) - 1):
            raise ConfigError(f"state table needs 2**b_cell rows, got {len(states)}")
        if [s.level for s in states] != list(range(len(states))):
            raise ConfigError("state levels must be 0..2**b_cell-1 in order")
        means = [s.mean for s in states]
        if any(b <= a for a, b in zip(means, means[1:])):
            raise ConfigError("state means must be strictly increasing")
        if means[0] < 0:
            raise ConfigError("state means must be non-negative")
        if any(s.sigma < 0 for s in states):
            raise ConfigError("state sigma must be >= 0")

    @property
    def b_cell(self) -> int:
        return len(self.states).bit_length() - 1

    @property
    def means(self) -> np.ndarray:
        return np.array([s.mean for s in self.states])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([s.sigma for s in self.states])

    @property
    def g_min(self) -> float:
        return self.states[0].mean

    @property
    def g_max(self) -> float:
        return self.states[-1].mean

    @property
    def unit(self) -> float:
        """Analog spacing of adjacent ideal MAC levels."""
        return (self.g_max - self.g_min) / (len(self.states) - 1)

    def with_sigmas(self, sigmas) -> "StateTable":
        sigmas = list(sigmas)
        if len(sigmas) != len(self.states):
            raise ConfigError(f"expected {len(self.states)} sigmas, got {len(sigmas)}")
        return StateTable(tuple(MemState(s.level, s.mean, float(sg)) for s, sg in zip(self.states, sigmas)))

    @classmethod
    def linear(cls, b_cell: int, g_off: float = G_OFF, g_on: float = G_ON, sigmas=None) -> "StateTable":
        n = 1 << b_cell
        means = np.linspace(g_off, g_on, n)
        sigmas = np.zeros(n) if sigmas is None else np.asarray(sigmas, dtype=float)
        if sigmas.size != n:
            raise ConfigError(f"expected {n} sigmas, got {sigmas.size}")
        return cls(tuple(MemState(i, float(m), float(s)) for i, (m, s) in enumerate(zip(means, sigmas))))

    @classmethod
    def from_csv(cls, path) -> "StateTable":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["state", "mean", "sigma"]:
                raise ConfigError(f"{path}: expected header 'state,mean,sigma'")
            for r in reader:
                rows.append(MemState(int(r["state"]), float(r["mean"]), float(r["sigma"])))
        rows.sort(key=lambda s: s.level)
        return cls(tuple(rows))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "mean", "sigma"])
            for s in self.states:
                w.writerow([s.level, repr(s.mean), repr(s.sigma)])


@dataclass(frozen=True)
class ArrayConfig:
    rows: int = 128
    cols: int = 128
    domain: Domain = Domain.CURRENT
    active_rows: Optional[int] = None
    dummy_column: bool = True
    states: Optional[StateTable] = None

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain(self.domain))
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("array rows and cols must be positive")
        a = self.rows if self.active_rows is None else self.active_rows
        if a < 1 or a > self.rows or self.rows % a:
            raise ConfigError(f"active_rows ({a}) must divide rows ({self.rows})")
        object.__setattr__(self, "active_rows", a)

    @property
    def sub_cycles(self) -> int:
        return self.rows // self.active_rows


def adc_out_max(r_active: int, p_dac: int, b_cell: int) -> int:
    return r_active * ((1 << p_dac) - 1) * ((1 << b_cell) - 1)


def required_adc_bits(r_active: int, p_dac: int, b_cell: int) -> int:
    """ceil(log2(out_max)) with out_max = R*(2^P_DAC-1)*(2^b_cell-1), floored at 1."""
    if min(r_active, p_dac, b_cell) < 1:
        raise ConfigError("required_adc_bits arguments must be >= 1")
    return max(1, math.ceil(math.log2(adc_out_max(r_active, p_dac, b_cell))))


def lossless_adc_bits(r_active: int, p_dac: int, b_cell: int) -> int:
    """Smallest width whose top code reaches out_max.

    Equal to :func:`required_adc_bits` except when out_max is a power of
    two, where the all-on column needs one extra bit.
    """
    return max(1, adc_out_max(r_active, p_dac, b_cell).bit_length())


@dataclass(frozen=True)
class AdcConfig:
    p_adc: int
    out_max: int

    def __post_init__(self):
        if self.p_adc < 1:
            raise ConfigError("ADC precision must be >= 1 bit")

    @property
    def top_code(self) -> int:
        return (1 << self.p_adc) - 1

    @classmethod
    def for_array(cls, array: ArrayConfig, cfg: PrecisionConfig, p_adc="auto", offset: int = 0) -> "AdcConfig":
        out_max = adc_out_max(array.active_rows, cfg.p_dac, cfg.b_cell)
        if p_adc in (None, "auto"):
            p_adc = lossless_adc_bits(array.active_rows, cfg.p_dac, cfg.b_cell)
        return cls(p_adc=max(1, int(p_adc) + offset), out_max=out_max)


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def adc_quantize(analog, adc: AdcConfig, unit: float):
    """Sense with a fixed level spacing ``unit`` and clip at the top code."""
    code = np.clip(_round_half_away(np.asarray(analog, dtype=np.float64) / unit), 0, adc.top_code)
    return code.astype(np.int64)


def tile_rng(seed: int, layer_id: int, tile_row: int, tile_col: int, stream: int = STREAM_PROGRAM) -> np.random.Generator:
    """Counter-based stream keyed by (seed, layer, tile, purpose); order independent."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(layer_id), int(tile_row), int(tile_col), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class ProgrammedTile:
    values: np.ndarray
    digits: np.ndarray
    saf_mask: np.ndarray  # 0 healthy, 1 stuck at min, 2 stuck at max


def program(digits: np.ndarray, states: StateTable, noise: DeviceNoiseSpec | None = None,
            rng: np.random.Generator | None = None) -> ProgrammedTile:
    """Write digits into analog cells: D2D draw, then SAF override, then drift.

    Stuck cells do not drift.
    """
    digits = np.asarray(digits, dtype=np.int64)
    if digits.size and (digits.min() < 0 or digits.max() >= len(states.states)):
        raise ConfigError("cell digit outside the state table")
    means = states.means
    values = means[digits]
    mask = np.zeros(digits.shape, dtype=np.int8)
    if noise is None:
        return ProgrammedTile(values, digits, mask)
    sigmas = np.asarray(noise.d2d_sigmas if noise.d2d_sigmas is not None else states.sigmas, dtype=float)
    if sigmas.size != len(states.states):
        raise ConfigError(f"sigma list has {sigmas.size} entries but the cell has {len(states.states)} states")
    if rng is None:
        raise ConfigError("device noise needs an RNG stream")
    if sigmas.any():
        values = values + sigmas[digits] * rng.standard_normal(digits.shape)
    if noise.p_sa0 > 0 or noise.p_sa1 > 0:
        u = rng.random(digits.shape)
        sa0 = u < noise.p_sa0
        sa1 = (~sa0) & (u < noise.p_sa0 + noise.p_sa1)
        mask[sa0] = 1
        mask[sa1] = 2
        values = np.where(sa0, states.g_min, np.where(sa1, states.g_max, values))
    if noise.drift is not None:
        healthy = mask == 0
        pos = np.maximum(values, states.g_min * 1e-6)
        drifted = apply_drift(pos, noise.drift, states.g_min, states.g_max, rng)
        values = np.where(healthy, drifted, values)
    return ProgrammedTile(values, digits, mask)


def analog_mvm_cycle(tile: ProgrammedTile, x, states: StateTable, p_dac: int, dummy_column: bool = True):
    """Column outputs sum_j value[j, c] * x[..., j] for one input cycle."""
    x = np.asarray(x)
    if x.shape[-1] != tile.values.shape[0]:
        raise InputError(f"input length {x.shape[-1]} != tile rows {tile.values.shape[0]}")
    if x.size and (x.min() < 0 or x.max() > (1 << p_dac) - 1):
        raise InputError(f"input digit outside DAC range [0, {(1 << p_dac) - 1}]")
    xf = x.astype(np.float64)
    out = xf @ tile.values
    if dummy_column:
        out = out - xf.sum(axis=-1, keepdims=True) * states.g_min
    return out


class AdcRecorder:
    """Collects (expected, observed) ADC codes for error-rate analysis."""

    def __init__(self, max_per_layer: int | None = None):
        self.max_per_layer = max_per_layer
        self.expected: dict[int, list] = {}
        self.observed: dict[int, list] = {}

    def add(self, layer_id: int, expected: np.ndarray, observed: np.ndarray) -> None:
        self.expected.setdefault(layer_id, []).append(expected.ravel())
        self.observed.setdefault(layer_id, []).append(observed.ravel())

    def arrays(self, layer_id: int) -> tuple[np.ndarray, np.ndarray]:
        e = np.concatenate(self.expected.get(layer_id, [np.zeros(0, np.int64)]))
        o = np.concatenate(self.observed.get(layer_id, [np.zeros(0, np.int64)]))
        if self.max_per_layer is not None and e.size > self.max_per_layer:
            idx = np.linspace(0, e.size - 1, self.max_per_layer).astype(np.int64)
            e, o = e[idx], o[idx]
        return e, o


@dataclass
class MappedLayer:
    """A tile map programmed onto arrays under one noise realisation."""

    tilemap: TileMap
    array: ArrayConfig
    states: StateTable
    noise: NoiseSpec
    seed: int = 0
    layer_id: int = 0
    tiles: dict = field(default_factory=dict)
    assembly: np.ndarray = None

    @classmethod
    def build(cls, tilemap: TileMap, array: ArrayConfig, noise: NoiseSpec | None = None,
              seed: int = 0, layer_id: int = 0) -> "MappedLayer":
        if (tilemap.rows, tilemap.cols) != (array.rows, array.cols):
            raise ConfigError("tile map and array dimensions differ")
        states = array.states or StateTable.linear(tilemap.cfg.b_cell)
        if states.b_cell != tilemap.cfg.b_cell:
            raise ConfigError(f"state table has {len(states.states)} states but b_cell={tilemap.cfg.b_cell}")
        noise = noise or NoiseSpec()
        layer = cls(tilemap, array, states, noise, seed, layer_id)
        dev = noise.device
        for tr in range(tilemap.row_tiles):
            for tc in range(tilemap.col_tiles):
                rng = tile_rng(seed, layer_id, tr, tc, STREAM_PROGRAM) if dev is not None else None
                layer.tiles[tr, tc] = program(tilemap.tile(tr, tc), states, dev, rng)
        sig = np.left_shift(1, tilemap.column_slice * tilemap.cfg.b_cell).astype(np.int64)
        asm = np.zeros((tilemap.column_weight.size, tilemap.m), dtype=np.int64)
        used = tilemap.column_weight >= 0
        asm[np.nonzero(used)[0], tilemap.column_weight[used]] = sig[used]
        layer.assembly = asm
        return layer

    @property
    def cfg(self) -> PrecisionConfig:
        return self.tilemap.cfg

    def weights(self) -> np.ndarray:
        return self.tilemap.reconstruct()


def _tile_codes(layer: MappedLayer, tr: int, tc: int, xdig: np.ndarray, adc: AdcConfig,
                recorder: AdcRecorder | None) -> np.ndarray:
    """Shift-added column codes of one tile, shape (batch, C)."""
    tm, arr = layer.tilemap, layer.array
    cfg = tm.cfg
    used_rows = tm.tile_rows_used(tr)
    tile = layer.tiles[tr, tc]
    r0 = tr * tm.rows
    cols = slice(tc * tm.cols, (tc + 1) * tm.cols)
    col_used = tm.column_weight[cols] >= 0
    batch = xdig.shape[1]
    acc = np.zeros((batch, tm.cols), dtype=np.int64)
    if used_rows == 0 or not col_used.any():
        return acc
    cidx = np.nonzero(col_used)[0]
    cyc_sig = np.array(cfg.cycle_significances(), dtype=np.int64)[:, None, None]
    read_rng = tile_rng(layer.seed, layer.layer_id, tr, tc, STREAM_READ) if layer.noise.circuit is not None else None
    a = arr.active_rows
    for g0 in range(0, used_rows, a):
        g1 = min(g0 + a, used_rows)
        x = xdig[:, :, r0 + g0:r0 + g1]
        digits = tile.digits[g0:g1][:, cidx]
        expected = None
        if layer.noise.circuit is not None or recorder is not None:
            ideal = (x.astype(np.float64) @ digits.astype(np.float64)).astype(np.int64)
            expected = np.minimum(ideal, adc.top_code)
        if layer.noise.circuit is not None:
            codes = sample_output_noise(expected, layer.noise.circuit, read_rng, adc.p_adc)
        else:
            sub = ProgrammedTile(tile.values[g0:g1][:, cidx], digits, tile.saf_mask[g0:g1][:, cidx])
            analog = analog_mvm_cycle(sub, x, layer.states, cfg.p_dac, arr.dummy_column)
            codes = adc_quantize(analog, adc, layer.states.unit)
        if recorder is not None:
            recorder.add(layer.layer_id, expected, codes)
        acc[:, cidx] += (codes * cyc_sig).sum(axis=0)
    return acc


def critical_loop(layer: MappedLayer, inputs, adc: AdcConfig | None = None, signed_inputs: bool = False,
                  recorder: AdcRecorder | None = None, jobs: int = 1) -> np.ndarray:
    """Integer partial sums of ``inputs @ W`` computed on the programmed tiles.

    ``inputs`` is (batch, N) integer; signed inputs are offset-encoded by
    2**(b_in-1) and the matching digital term is removed, as is the weight
    offset. With no noise and a lossless ADC the result equals the signed
    integer matmul exactly.
    """
    tm = layer.tilemap
    cfg = tm.cfg
    x = np.asarray(inputs, dtype=np.int64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.shape[-1] != tm.n:
        raise InputError(f"input length {x.shape[-1]} != layer rows {tm.n}")
    in_off = (1 << (cfg.b_in - 1)) if signed_inputs else 0
    xu = x + in_off
    if xu.size and (xu.min() < 0 or xu.max() > (1 << cfg.b_in) - 1):
        kind = "signed" if signed_inputs else "unsigned"
        raise InputError(f"inputs outside the {kind} {cfg.b_in}-bit range")
    adc = adc or AdcConfig.for_array(layer.array, cfg)
    batch = x.shape[0]
    pad = tm.row_tiles * tm.rows - tm.n
    xdig = input_digits(np.pad(xu, ((0, 0), (0, pad))), cfg)

    keys = sorted(layer.tiles)

    def run(key):
        return key, _tile_codes(layer, key[0], key[1], xdig, adc, recorder)

    if jobs > 1 and recorder is None:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = dict(ex.map(run, keys))
    else:
        results = dict(run(k) for k in keys)

    y = np.zeros((batch, tm.m), dtype=np.int64)
    for tr, tc in keys:
        cols = slice(tc * tm.cols, (tc + 1) * tm.cols)
        y += results[tr, tc] @ layer.assembly[cols]
    cycle_sums = xdig.sum(axis=2)
    y -= offset_correction(cycle_sums, cfg)[:, None]
    if in_off:
        y -= in_off * layer.weights().sum(axis=0)[None, :]
    return y[0] if squeeze else y
