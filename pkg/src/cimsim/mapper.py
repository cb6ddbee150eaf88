"""Weight slicing, tiling and im2col lowering.

Signed weights are stored offset-encoded (w + 2**(b_w-1)) so every cell
digit is unsigned; the matching digital correction is computed from the
per-cycle input sums by :func:`offset_correction`.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, MappingError
from .quantizer import QuantizedTensor


@dataclass(frozen=True)
class PrecisionConfig:
    b_in: int = 8
    b_w: int = 8
    b_cell: int = 1
    p_dac: int = 1

    def __post_init__(self):
        for name in ("b_in", "b_w", "b_cell", "p_dac"):
            if getattr(self, name) < 1:
                raise ConfigError(f"precision.{name} must be >= 1")

    @property
    def n_cell(self) -> int:
        return math.ceil(self.b_w / self.b_cell)

    @property
    def n_in(self) -> int:
        return math.ceil(self.b_in / self.p_dac)

    @property
    def weight_offset(self) -> int:
        return 1 << (self.b_w - 1)

    def slice_significances(self) -> list[int]:
        return [1 << (i * self.b_cell) for i in range(self.n_cell)]

    def cycle_significances(self) -> list[int]:
        return [1 << (j * self.p_dac) for j in range(self.n_in)]


@dataclass
class TileMap:
    """Bit-sliced weight matrix laid out on a grid of R x C tiles.

    ``digits`` holds the full padded mapped matrix of shape
    (row_tiles*R, col_tiles*C); ``column_weight`` and ``column_slice`` give,
    for each padded column, the source weight column (-1 for padding) and
    the slice index i (significance 2**(i*b_cell)).
    """

    rows: int
    cols: int
    n: int
    m: int
    cfg: PrecisionConfig
    digits: np.ndarray
    column_weight: np.ndarray
    column_slice: np.ndarray
    name: str = ""

    @property
    def weights_per_tile(self) -> int:
        return self.cols // self.cfg.n_cell

    @property
    def row_tiles(self) -> int:
        return self.digits.shape[0] // self.rows

    @property
    def col_tiles(self) -> int:
        return self.digits.shape[1] // self.cols

    @property
    def grid(self) -> tuple[int, int]:
        return self.row_tiles, self.col_tiles

    def tile(self, tr: int, tc: int) -> np.ndarray:
        return self.digits[tr * self.rows:(tr + 1) * self.rows, tc * self.cols:(tc + 1) * self.cols]

    def tile_rows_used(self, tr: int) -> int:
        return max(0, min(self.rows, self.n - tr * self.rows))

    def tile_cols_used(self, tc: int) -> int:
        sl = self.column_weight[tc * self.cols:(tc + 1) * self.cols]
        return int((sl >= 0).sum())

    def reconstruct(self) -> np.ndarray:
        """Signed integer weights recovered from the stored digits."""
        w = np.zeros((self.digits.shape[0], self.m), dtype=np.int64)
        used = self.column_weight >= 0
        sig = np.left_shift(1, self.column_slice[used] * self.cfg.b_cell).astype(np.int64)
        np.add.at(w.T, self.column_weight[used], (self.digits[:, used] * sig).T)
        return w[: self.n] - self.cfg.weight_offset

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for tr in range(self.row_tiles):
            for tc in range(self.col_tiles):
                np.savetxt(os.path.join(directory, f"tile_{tr}_{tc}.csv"), self.tile(tr, tc), fmt="%d", delimiter=",")
        manifest = {
            "layer": self.name,
            "grid": [self.row_tiles, self.col_tiles],
            "array": [self.rows, self.cols],
            "shape": [self.n, self.m],
            "precision": {"b_in": self.cfg.b_in, "b_w": self.cfg.b_w, "b_cell": self.cfg.b_cell, "p_dac": self.cfg.p_dac},
            "significances": self.cfg.slice_significances(),
            "column_weight": self.column_weight.tolist(),
            "column_slice": self.column_slice.tolist(),
        }
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory) -> "TileMap":
        with open(os.path.join(directory, "manifest.json")) as fh:
            man = json.load(fh)
        rows, cols = man["array"]
        rt, ct = man["grid"]
        digits = np.zeros((rt * rows, ct * cols), dtype=np.int64)
        for tr in range(rt):
            for tc in range(ct):
                t = np.loadtxt(os.path.join(directory, f"tile_{tr}_{tc}.csv"), dtype=np.int64, delimiter=",", ndmin=2)
                digits[tr * rows:(tr + 1) * rows, tc * cols:(tc + 1) * cols] = t
        return cls(rows=rows, cols=cols, n=man["shape"][0], m=man["shape"][1],
                   cfg=PrecisionConfig(**man["precision"]), digits=digits,
                   column_weight=np.array(man["column_weight"], dtype=np.int64),
                   column_slice=np.array(man["column_slice"], dtype=np.int64), name=man["layer"])


def tile_grid(n: int, m: int, cfg: PrecisionConfig, rows: int, cols: int) -> tuple[int, int]:
    if cols < cfg.n_cell:
        raise MappingError(f"array has {cols} columns but one weight needs {cfg.n_cell} cells")
    per_tile = cols // cfg.n_cell
    return math.ceil(n / rows), math.ceil(m / per_tile)


def slice_weights(wq: QuantizedTensor | np.ndarray, cfg: PrecisionConfig, rows: int, cols: int,
                  name: str = "") -> TileMap:
    w = wq.data if isinstance(wq, QuantizedTensor) else np.asarray(wq, dtype=np.int64)
    if w.ndim != 2:
        raise MappingError(f"weight matrix must be 2-D (N x M), got shape {w.shape}")
    lo, hi = -(1 << (cfg.b_w - 1)), (1 << (cfg.b_w - 1)) - 1
    if w.size and (w.min() < lo or w.max() > hi):
        raise MappingError(f"weights exceed signed {cfg.b_w}-bit range")
    n, m = w.shape
    row_tiles, col_tiles = tile_grid(n, m, cfg, rows, cols)
    per_tile = cols // cfg.n_cell
    ncell = cfg.n_cell
    mask = (1 << cfg.b_cell) - 1

    u = w + cfg.weight_offset
    digits = np.zeros((row_tiles * rows, col_tiles * cols), dtype=np.int64)
    column_weight = np.full(col_tiles * cols, -1, dtype=np.int64)
    column_slice = np.zeros(col_tiles * cols, dtype=np.int64)
    # weight m goes to tile m // per_tile, local columns (m % per_tile)*ncell + i
    mcol = np.arange(m)
    base = (mcol // per_tile) * cols + (mcol % per_tile) * ncell
    for i in range(ncell):
        idx = base + i
        digits[:n, idx] = (u >> (i * cfg.b_cell)) & mask
        column_weight[idx] = mcol
        column_slice[idx] = i
    return TileMap(rows=rows, cols=cols, n=n, m=m, cfg=cfg, digits=digits,
                   column_weight=column_weight, column_slice=column_slice, name=name)


def conv_output_size(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def im2col(x, kernel: tuple[int, int], stride: int = 1, pad: int = 0) -> np.ndarray:
    """Unfold a C x H x W (or B x C x H x W) tensor into patch rows.

    Rows run row-major over (out_y, out_x); each row is channel-major,
    i.e. ordered (c, ky, kx) to match ``weight.reshape(C_out, -1)``.
    """
    data = x.data if isinstance(x, QuantizedTensor) else np.asarray(x)
    batched = data.ndim == 4
    if not batched:
        data = data[None]
    if data.ndim != 4:
        raise MappingError(f"im2col expects C x H x W input, got shape {data.shape}")
    kh, kw = kernel
    b, c, h, w = data.shape
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise MappingError(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    if pad:
        data = np.pad(data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)
    return cols if batched else cols[0]


def input_digits(xu: np.ndarray, cfg: PrecisionConfig) -> np.ndarray:
    """Split unsigned inputs into N_in digits of P_DAC bits, LSB cycle first."""
    xu = np.asarray(xu, dtype=np.int64)
    mask = (1 << cfg.p_dac) - 1
    return np.stack([(xu >> (j * cfg.p_dac)) & mask for j in range(cfg.n_in)])


def offset_correction(cycle_sums, cfg: PrecisionConfig) -> np.ndarray:
    """Digital term removing the weight offset from accumulated outputs.

    ``cycle_sums[j]`` is the sum of active input digits in cycle j.
    """
    s = np.asarray(cycle_sums, dtype=np.int64)
    sig = np.array(cfg.cycle_significances(), dtype=np.int64).reshape((-1,) + (1,) * (s.ndim - 1))
    return cfg.weight_offset * (sig * s).sum(axis=0)
