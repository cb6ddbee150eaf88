"""Error metrics, design-space sweeps and Pareto filtering."""
from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .config import HardwareConfig
from .crossbar import ArrayConfig, StateTable
from .errors import ConfigError, RmseUndefined
from .noise import DeviceNoiseSpec, NoiseSpec, relative_sigmas
from .ppa import CoefficientTable, collect_trace, estimate

log = logging.getLogger(__name__)


def layer_rmse(ideal, noisy) -> float:
    """Root-mean-square error of ``noisy`` normalised by the RMS of ``ideal``."""
    y = np.asarray(ideal, dtype=np.float64)
    yh = np.asarray(noisy, dtype=np.float64)
    if y.shape != yh.shape:
        raise ConfigError(f"shape mismatch {y.shape} vs {yh.shape}")
    ms = np.mean(y ** 2) if y.size else 0.0
    if ms == 0:
        raise RmseUndefined("ideal output is all zero; normalised RMSE undefined")
    return float(np.sqrt(np.mean((yh - y) ** 2)) / np.sqrt(ms))


@dataclass
class ErrorRates:
    levels: np.ndarray
    counts: np.ndarray
    errors: np.ndarray

    @property
    def rates(self) -> np.ndarray:
        return self.errors / np.maximum(self.counts, 1)

    @property
    def overall(self) -> float:
        total = self.counts.sum()
        return float(self.errors.sum() / total) if total else 0.0

    def histogram(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts / total if total else self.counts.astype(float)

    def trend(self, min_count: int = 100) -> float:
        """Spearman correlation of error rate against expected level (bins with >= min_count samples)."""
        keep = self.counts >= min_count
        if keep.sum() < 2 or np.ptp(self.rates[keep]) == 0:
            return float("nan")
        return float(spearmanr(self.levels[keep], self.rates[keep]).correlation)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "count", "errors", "error_rate", "fraction"])
            for lv, c, e, r, f in zip(self.levels, self.counts, self.errors, self.rates, self.histogram()):
                w.writerow([int(lv), int(c), int(e), repr(float(r)), repr(float(f))])


def adc_error_rate(expected, observed) -> ErrorRates:
    """Per expected-level fraction of ADC codes that differ from the ideal code."""
    e = np.asarray(expected, dtype=np.int64).ravel()
    o = np.asarray(observed, dtype=np.int64).ravel()
    if e.shape != o.shape:
        raise ConfigError("expected and observed streams differ in length")
    if e.size == 0:
        return ErrorRates(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    levels, inv = np.unique(e, return_inverse=True)
    counts = np.bincount(inv, minlength=levels.size)
    errors = np.bincount(inv, weights=(e != o), minlength=levels.size).astype(np.int64)
    return ErrorRates(levels, counts, errors)


@dataclass(frozen=True)
class DesignPoint:
    config_hash: str
    array: int
    b_cell: int
    p_adc: int
    accuracy: float
    tops_w: float
    tops_mm2: float
    fps: float
    b_in: int = 8
    b_w: int = 8
    status: str = "ok"

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0 or np.isnan(self.accuracy)):
            raise ConfigError(f"accuracy {self.accuracy} outside [0, 1]")


@dataclass
class SweepSpec:
    """Grid over array size, cell bits, ADC offset and (b_in, b_w) pairs around a base config."""

    arrays: Sequence[int] = (128,)
    b_cells: Sequence[int] = (1,)
    adc_offsets: Sequence[int] = (0,)
    precisions: Sequence[tuple] = ((8, 8),)
    base: HardwareConfig = field(default_factory=HardwareConfig)
    noise_fraction: Optional[tuple] = None  # (hrs, lrs) relative D2D sigma, applied per point
    seeds: int = 3
    coefficients: Optional[CoefficientTable] = None
    duplication: int = 1

    def __post_init__(self):
        if not all((self.arrays, self.b_cells, self.adc_offsets, self.precisions)):
            raise ConfigError("sweep grid must be non-empty on every axis")
        if any(o > 0 for o in self.adc_offsets):
            raise ConfigError("ADC offsets must be <= 0")

    def points(self) -> list:
        return list(itertools.product(self.arrays, self.b_cells, self.adc_offsets, self.precisions))

    def hardware(self, point) -> HardwareConfig:
        size, b_cell, offset, (b_in, b_w) = point
        base = self.base
        prec = replace(base.precision, b_in=b_in, b_w=b_w, b_cell=b_cell)
        states = StateTable.linear(b_cell)
        noise = base.noise
        if self.noise_fraction is not None:
            noise = NoiseSpec(device=DeviceNoiseSpec(d2d_sigmas=relative_sigmas(states.means, *self.noise_fraction)))
        active = base.array.active_rows if base.array.active_rows < base.array.rows else None
        if active is not None and size % active:
            active = None
        arr = ArrayConfig(rows=size, cols=size, domain=base.array.domain, active_rows=active,
                          dummy_column=base.array.dummy_column, states=states)
        return HardwareConfig(precision=prec, array=arr, p_adc="auto", adc_offset=offset, noise=noise,
                              seed=base.seed, jobs=1)


def config_hash(hw: HardwareConfig) -> str:
    desc = {
        "precision": [hw.precision.b_in, hw.precision.b_w, hw.precision.b_cell, hw.precision.p_dac],
        "array": [hw.array.rows, hw.array.cols, hw.array.active_rows, hw.array.domain.value, hw.array.dummy_column],
        "adc": hw.adc().p_adc,
        "noise": repr(hw.noise.device) + repr(hw.noise.circuit is not None),
        "seed": hw.seed,
    }
    return hashlib.sha1(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:12]


def evaluate_point(hw: HardwareConfig, model, eval_x, eval_y, calib_batches, input_shape, seeds: int = 3,
                   coefficients: CoefficientTable | None = None, duplication: int = 1) -> tuple:
    """Median accuracy over noise seeds plus the PPA report for one configuration."""
    from .netexec.graph import accuracy, calibrate_model, run_inference

    m = calibrate_model(copy.deepcopy(model), calib_batches, hw.precision)
    accs = [accuracy(run_inference(m, eval_x, replace(hw, seed=hw.seed + s)).logits, eval_y) for s in range(seeds)]
    report = estimate(collect_trace(m, hw, input_shape), coefficients or CoefficientTable.default(), duplication)
    return float(np.median(accs)), report


def run_sweep(spec: SweepSpec, model, eval_x, eval_y, calib_batches, jobs: int = 1) -> list:
    """One DesignPoint per grid cell, in grid order; failed points carry an error status."""
    input_shape = tuple(np.asarray(eval_x).shape[1:])

    def one(point):
        size, b_cell, offset, (b_in, b_w) = point
        try:
            hw = spec.hardware(point)
            acc, rep = evaluate_point(hw, model, eval_x, eval_y, calib_batches, input_shape, spec.seeds,
                                      spec.coefficients, spec.duplication)
            return DesignPoint(config_hash(hw), size, b_cell, hw.adc().p_adc, acc, rep.tops_per_w, rep.tops_per_mm2,
                               rep.fps, b_in, b_w)
        except Exception as exc:  # recorded per point; the sweep continues
            log.warning("sweep point %s failed: %s", point, exc)
            key = hashlib.sha1(repr(point).encode()).hexdigest()[:12]
            return DesignPoint(key, size, b_cell, -1, float("nan"), float("nan"), float("nan"), float("nan"),
                               b_in, b_w, status=f"error: {type(exc).__name__}: {exc}")

    points = spec.points()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(one, points))
    return [one(p) for p in points]


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def pareto_front(points: Sequence, objectives: Sequence = (("accuracy", True), ("tops_w", True))) -> list:
    """Non-dominated subset, in input order.

    ``objectives`` are (attribute or index, maximize) pairs; points may be
    DesignPoints or plain tuples. Identical points never dominate each other.
    """
    if not len(points):
        return []

    def vec(p):
        out = []
        for key, maximize in objectives:
            v = p[key] if isinstance(key, int) else getattr(p, key)
            out.append(v if maximize else -v)
        return tuple(out)

    vals = [vec(p) for p in points]
    # lexicographically descending: no later point can dominate an earlier one
    order = sorted(range(len(points)), key=lambda i: vals[i], reverse=True)
    front: list = []
    for i in order:
        if not any(dominates(vals[j], vals[i]) for j in front):
            front.append(i)
    return [points[i] for i in sorted(front)]


def write_sweep_csv(path, points: Sequence[DesignPoint], objectives=(("accuracy", True), ("tops_w", True))) -> None:
    ok = [p for p in points if p.status == "ok"]
    front = {id(p) for p in pareto_front(ok, objectives)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_hash", "array", "b_cell", "p_adc", "acc", "tops_w", "tops_mm2", "fps", "pareto_flag",
                    "b_in", "b_w", "status"])
        for p in points:
            w.writerow([p.config_hash, p.array, p.b_cell, p.p_adc, repr(p.accuracy), repr(p.tops_w),
                        repr(p.tops_mm2), repr(p.fps), int(id(p) in front), p.b_in, p.b_w, p.status])
