"""Digital CIM: exact integer matmul with a 32-bit accumulator."""
from __future__ import annotations

import numpy as np

from ..errors import AccumError, ConfigError
from ..quantizer import QuantizedTensor, QuantParams, quantize

ACC_BITS = 32


def dcim_matmul(a: QuantizedTensor, b: QuantizedTensor, out_params: QuantParams | None = None):
    """Exact ``a @ b`` on integer codes (batched over leading axes).

    Returns raw int64 accumulators, or, given ``out_params``, the result
    requantized to that 8-bit grid.
    """
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ConfigError(f"inner dimensions differ: {a.data.shape} @ {b.data.shape}")
    limit = (1 << (ACC_BITS - 1)) - 1
    worst = np.abs(a.data) @ np.abs(b.data)
    if worst.size and worst.max() > limit:
        raise AccumError(f"partial sums may exceed the {ACC_BITS}-bit accumulator")
    acc = a.data @ b.data
    if out_params is None:
        return acc
    return quantize(acc * (a.params.scale * b.params.scale), out_params)
