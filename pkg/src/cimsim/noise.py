"""Device-expert and circuit-expert noise models.

Device mode perturbs programmed cell values before the ADC (Gaussian
device-to-device spread, stuck-at faults, power-law drift). Circuit mode
skips the cell model and perturbs ideal ADC codes with per-level
Gaussian statistics read from ``output_noise.csv``. A run uses one or the
other, never both.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError


class DriftMode(str, enum.Enum):
    RANDOM = "random"
    TOWARD_GMAX = "toward_gmax"
    TOWARD_GMIN = "toward_gmin"


@dataclass(frozen=True)
class DriftSpec:
    t: float
    v: float
    t0: float = 1.0
    mode: DriftMode = DriftMode.RANDOM

    def __post_init__(self):
        object.__setattr__(self, "mode", DriftMode(self.mode))
        if not self.t0 > 0:
            raise ConfigError("drift.t0 must be > 0")
        if self.t < self.t0:
            raise ConfigError(f"drift.t ({self.t}) must be >= drift.t0 ({self.t0})")


@dataclass(frozen=True)
class DeviceNoiseSpec:
    """Per-state Gaussian sigmas plus SAF rates and optional drift.

    ``d2d_sigmas=None`` means "use the sigmas of the state table".
    """

    d2d_sigmas: Optional[tuple] = None
    p_sa0: float = 0.0
    p_sa1: float = 0.0
    drift: Optional[DriftSpec] = None

    def __post_init__(self):
        if self.d2d_sigmas is not None:
            object.__setattr__(self, "d2d_sigmas", tuple(float(s) for s in self.d2d_sigmas))
            if any(s < 0 for s in self.d2d_sigmas):
                raise ConfigError("d2d sigmas must be >= 0")
        for name in ("p_sa0", "p_sa1"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {p}")
        if self.p_sa0 + self.p_sa1 > 1.0 + 1e-12:
            raise ConfigError("p_sa0 + p_sa1 must not exceed 1")


@dataclass
class OutputNoiseTable:
    """Per-ADC-level (mean, std) of the sensed MAC output.

    A single-row table is the uniform shorthand: its std applies to every
    level and its mean is read as an offset ``mean - level`` from the
    ideal level.
    """

    levels: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if not (self.levels.shape == self.means.shape == self.stds.shape) or self.levels.ndim != 1:
            raise ConfigError("output noise table columns must be equal-length vectors")
        if self.levels.size == 0:
            raise ConfigError("output noise table is empty")
        if (self.stds < 0).any():
            raise ConfigError("output noise std must be >= 0")
        if len(set(self.levels.tolist())) != self.levels.size:
            raise ConfigError("duplicate level in output noise table")

    @property
    def uniform(self) -> bool:
        return self.levels.size == 1

    @classmethod
    def identity(cls, p_adc: int) -> "OutputNoiseTable":
        lv = np.arange(1 << p_adc)
        return cls(lv, lv.astype(float), np.zeros(lv.size))

    @classmethod
    def uniform_sigma(cls, std: float) -> "OutputNoiseTable":
        return cls(np.array([0]), np.array([0.0]), np.array([float(std)]))

    @classmethod
    def from_csv(cls, path) -> "OutputNoiseTable":
        levels, means, stds = [], [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["level", "mean", "std"]:
                raise ConfigError(f"{path}: expected header 'level,mean,std'")
            for row in reader:
                levels.append(int(row["level"]))
                means.append(float(row["mean"]))
                stds.append(float(row["std"]))
        return cls(np.array(levels), np.array(means), np.array(stds))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "mean", "std"])
            for lv, m, s in zip(self.levels, self.means, self.stds):
                w.writerow([int(lv), repr(float(m)), repr(float(s))])

    def lookup(self, ideal_levels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ideal = np.asarray(ideal_levels, dtype=np.int64)
        if self.uniform:
            offset = self.means[0] - self.levels[0]
            return ideal + offset, np.full(ideal.shape, self.stds[0])
        size = max(int(self.levels.max()), int(ideal.max(initial=0))) + 1
        present = np.zeros(size, dtype=bool)
        mean_by = np.zeros(size)
        std_by = np.zeros(size)
        present[self.levels] = True
        mean_by[self.levels] = self.means
        std_by[self.levels] = self.stds
        if ideal.size and (ideal.min() < 0 or not present[ideal].all()):
            missing = sorted(set(ideal[~present[np.clip(ideal, 0, size - 1)]].tolist()))
            raise ConfigError(f"output noise table has no row for level(s) {missing[:10]}")
        return mean_by[ideal], std_by[ideal]


@dataclass(frozen=True)
class NoiseSpec:
    """Exactly one of device or circuit mode, or neither (noiseless)."""

    device: Optional[DeviceNoiseSpec] = None
    circuit: Optional[OutputNoiseTable] = None

    def __post_init__(self):
        if self.device is not None and self.circuit is not None:
            raise ConfigError("device and circuit modes are exclusive")

    @property
    def mode(self) -> str:
        if self.device is not None:
            return "device"
        if self.circuit is not None:
            return "circuit"
        return "none"


def drift(g0, t: float, t0: float, v: float):
    """Power-law retention drift G(t) = G0 * (t/t0)**v."""
    return np.asarray(g0, dtype=np.float64) * (t / t0) ** v


def apply_drift(g0, spec: DriftSpec, g_min: float, g_max: float, rng: np.random.Generator | None = None):
    """Drift cell values to the frozen time ``spec.t`` and clamp to the state range.

    Random mode draws one exponent sign per cell; the toward modes force the
    sign that moves values up (Gmax) or down (Gmin).
    """
    g0 = np.asarray(g0, dtype=np.float64)
    if (g0 <= 0).any():
        raise ConfigError("drift requires strictly positive cell values")
    mag = abs(spec.v)
    if spec.mode is DriftMode.TOWARD_GMAX:
        expo = np.full(g0.shape, mag)
    elif spec.mode is DriftMode.TOWARD_GMIN:
        expo = np.full(g0.shape, -mag)
    else:
        if rng is None:
            raise ConfigError("random drift needs an RNG stream")
        expo = np.where(rng.random(g0.shape) < 0.5, -mag, mag)
    out = g0 * (spec.t / spec.t0) ** expo
    return np.clip(out, g_min, g_max)


def relative_sigmas(means: Sequence[float], frac_low: float, frac_high: float | None = None) -> list[float]:
    """Per-state sigmas as a fraction of each state mean.

    The fraction is interpolated linearly from ``frac_low`` at the lowest
    state (HRS) to ``frac_high`` at the highest (LRS), e.g. 4%/2%.
    """
    frac_high = frac_low if frac_high is None else frac_high
    n = len(means)
    fr = np.linspace(frac_low, frac_high, n) if n > 1 else np.array([frac_low])
    return [float(f * m) for f, m in zip(fr, means)]


def sample_output_noise(ideal_levels, table: OutputNoiseTable, rng: np.random.Generator, p_adc: int) -> np.ndarray:
    """Replace ideal ADC codes with a noisy draw, rounded and clipped to the ADC range."""
    mean, std = table.lookup(ideal_levels)
    noisy = mean + std * rng.standard_normal(np.shape(mean))
    code = np.sign(noisy) * np.floor(np.abs(noisy) + 0.5)
    return np.clip(code, 0, (1 << p_adc) - 1).astype(np.int64)


def confusion_matrix(table: OutputNoiseTable, samples_per_level: int, p_adc: int,
                     rng: np.random.Generator | None = None, levels: Sequence[int] | None = None) -> np.ndarray:
    """Monte-Carlo estimate of P(observed | ideal), one row per ideal level."""
    if samples_per_level < 1:
        raise ConfigError("samples_per_level must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    n_codes = 1 << p_adc
    if levels is None:
        levels = range(n_codes) if table.uniform else sorted(int(v) for v in table.levels if v < n_codes)
    levels = list(levels)
    mat = np.zeros((len(levels), n_codes))
    for r, lv in enumerate(levels):
        obs = sample_output_noise(np.full(samples_per_level, lv), table, rng, p_adc)
        mat[r] = np.bincount(obs, minlength=n_codes) / samples_per_level
    return mat
