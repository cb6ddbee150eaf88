"""8-bit lookup-table activations and integer softmax."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError
from ..quantizer import QuantizedTensor, QuantParams, quantize

RECIP_BITS = 16
PROB_PARAMS = QuantParams(scale=1.0 / 255, bits=8, signed=False)

_erf = np.vectorize(math.erf, otypes=[float])


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


@dataclass
class Lut8:
    table: np.ndarray
    in_params: QuantParams
    out_params: QuantParams

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.int64)
        if self.table.shape != (256,) or self.in_params.bits != 8 or self.out_params.bits != 8:
            raise ConfigError("Lut8 needs a 256-entry table with 8-bit input and output")
        if self.table.min() < self.out_params.qmin or self.table.max() > self.out_params.qmax:
            raise ConfigError("LUT entries outside the output code range")

    @classmethod
    def build(cls, fn: Callable, in_params: QuantParams, out_params: QuantParams) -> "Lut8":
        """Tabulate ``fn`` at every dequantized input code and requantize."""
        codes = np.arange(in_params.qmin, in_params.qmax + 1)
        return cls(quantize(fn(codes * in_params.scale), out_params).data, in_params, out_params)

    @classmethod
    def identity(cls, params: QuantParams) -> "Lut8":
        return cls(np.arange(params.qmin, params.qmax + 1), params, params)


def lut_apply(x: QuantizedTensor, lut: Lut8) -> QuantizedTensor:
    if x.params.bits != 8 or x.params.signed != lut.in_params.signed:
        raise ConfigError(f"LUT expects {'signed' if lut.in_params.signed else 'unsigned'} 8-bit input, "
                          f"got {x.params.bits}-bit {'signed' if x.params.signed else 'unsigned'}")
    return QuantizedTensor(lut.table[x.data - lut.in_params.qmin], lut.out_params)


def exp_lut(score_scale: float) -> Lut8:
    """exp(-d * scale) for a non-negative code distance d in [0, 255], output in 1/255 steps."""
    return Lut8.build(lambda v: np.exp(-v), QuantParams(score_scale, 8, signed=False), PROB_PARAMS)


def softmax_via_lut(scores: QuantizedTensor, recip_bits: int = RECIP_BITS) -> QuantizedTensor:
    """Row-wise softmax over the last axis using only integer operations.

    Max-subtraction in the code domain, exp via LUT, then each entry is
    multiplied by a ``recip_bits`` fixed-point reciprocal of the row sum.
    """
    if scores.params.bits != 8:
        raise ConfigError("softmax LUT expects 8-bit scores")
    s = scores.data
    dist = np.minimum(s.max(axis=-1, keepdims=True) - s, 255)
    lut = exp_lut(scores.params.scale)
    e = lut_apply(QuantizedTensor(dist, lut.in_params), lut).data
    total = e.sum(axis=-1, keepdims=True)  # >= 255: the row max maps to exp(0)
    one = 1 << recip_bits
    recip = (255 * one + total // 2) // total
    p = (e * recip + one // 2) >> recip_bits
    return QuantizedTensor(np.minimum(p, 255), PROB_PARAMS)
