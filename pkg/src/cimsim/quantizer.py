"""Symmetric post-training quantization.

Per-tensor scales only, zero-point fixed at 0. Activations that can go
negative are handled downstream by offset encoding in the mapper.
"""
from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CalibrationError, CalibrationWarning, ConfigError, QuantizeError

HIST_BINS = 2048
DEFAULT_PERCENTILE = 0.9999
DEFAULT_EPS = 1e-12


@dataclass(frozen=True)
class QuantParams:
    scale: float
    bits: int
    signed: bool = True
    degenerate: bool = False

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"scale must be > 0, got {self.scale}")
        if not 2 <= self.bits <= 16:
            raise ConfigError(f"bits must be in [2, 16], got {self.bits}")

    @property
    def qmin(self) -> int:
        return -(1 << (self.bits - 1)) if self.signed else 0

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.signed else (1 << self.bits) - 1


@dataclass
class QuantizedTensor:
    data: np.ndarray
    params: QuantParams

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.size and (self.data.min() < self.params.qmin or self.data.max() > self.params.qmax):
            raise QuantizeError("integer payload outside the representable range")

    @property
    def shape(self) -> tuple:
        return self.data.shape


class CalibrationKind(str, enum.Enum):
    MAX = "max"
    PERCENTILE = "percentile"


@dataclass(frozen=True)
class CalibrationMethod:
    kind: CalibrationKind = CalibrationKind.PERCENTILE
    percentile: float = DEFAULT_PERCENTILE

    def __post_init__(self):
        object.__setattr__(self, "kind", CalibrationKind(self.kind))
        if not 0 < self.percentile <= 1:
            raise ConfigError(f"percentile must be in (0, 1], got {self.percentile}")


@dataclass
class AbsHistogram:
    """Histogram of |x| over [0, max|x|], owned by the caller."""

    bins: int = HIST_BINS
    amax: float = 0.0
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.bins, dtype=np.int64)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.amax, self.bins + 1)

    def fill(self, batches: Sequence[np.ndarray]) -> None:
        for b in batches:
            if b.size:
                self.counts += np.histogram(np.abs(b), bins=self.bins, range=(0.0, self.amax))[0]

    def value_at(self, fraction: float) -> float:
        """Upper edge of the first bin whose CDF reaches ``fraction``."""
        total = self.counts.sum()
        if total == 0 or self.amax == 0:
            return 0.0
        cdf = np.cumsum(self.counts) / total
        idx = int(np.searchsorted(cdf, fraction - 1e-12, side="left"))
        idx = min(idx, self.bins - 1)
        return float(self.edges[idx + 1])


def _top_code(bits: int, signed: bool) -> int:
    return (1 << (bits - 1)) - 1 if signed else (1 << bits) - 1


def calibrate(samples: Iterable[np.ndarray], method: CalibrationMethod | None = None,
              bits: int = 8, signed: bool = True, eps: float = DEFAULT_EPS,
              histogram: AbsHistogram | None = None) -> QuantParams:
    """Pick a per-tensor scale from a stream of sample tensors.

    Max calibration maps max|x| onto the top code. Percentile calibration
    builds a 2048-bin histogram of |x| and uses the value where the CDF
    reaches the configured fraction. All-zero data yields ``eps`` with
    ``degenerate=True`` and a :class:`CalibrationWarning`.
    """
    method = method or CalibrationMethod()
    batches = []
    for s in samples:
        a = np.asarray(s, dtype=np.float64).ravel()
        a = a[np.isfinite(a)]
        batches.append(a)
    if not batches or sum(b.size for b in batches) == 0:
        raise CalibrationError("calibration stream contains no finite samples")

    amax = max(float(np.abs(b).max()) for b in batches if b.size)
    if amax == 0.0:
        warnings.warn("all calibration samples are zero; using epsilon scale", CalibrationWarning)
        return QuantParams(scale=eps, bits=bits, signed=signed, degenerate=True)

    if method.kind is CalibrationKind.MAX:
        clip_value = amax
    else:
        hist = histogram if histogram is not None else AbsHistogram()
        hist.amax = amax
        hist.counts[:] = 0
        hist.fill(batches)
        clip_value = hist.value_at(method.percentile)

    scale = max(clip_value / _top_code(bits, signed), eps)
    return QuantParams(scale=scale, bits=bits, signed=signed)


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quantize(x, params: QuantParams) -> QuantizedTensor:
    x = np.asarray(x, dtype=np.float64)
    bad = ~np.isfinite(x)
    if bad.any():
        idx = [tuple(int(i) for i in t) for t in np.argwhere(bad)]
        raise QuantizeError(f"non-finite values at indices {idx[:10]}", indices=idx)
    q = np.clip(round_half_away(x / params.scale), params.qmin, params.qmax)
    return QuantizedTensor(q.astype(np.int64), params)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.data.astype(np.float64) * q.params.scale


def write_calibration_csv(path, rows: Iterable[tuple[str, CalibrationMethod, QuantParams]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "method", "scale", "bits"])
        for name, method, params in rows:
            label = method.kind.value if method.kind is CalibrationKind.MAX else f"percentile:{method.percentile}"
            w.writerow([name, label, repr(params.scale), params.bits])
