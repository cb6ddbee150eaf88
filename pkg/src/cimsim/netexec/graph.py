"""Layer graph, calibration and end-to-end execution on the CIM fabric.

Tensors travel between nodes as floats. Every ACIM/DCIM/LUT node
quantizes its inputs with calibrated parameters, computes on integer
codes and dequantizes its result, so the per-layer pipeline is
quantize -> unfold -> map -> MAC -> noise -> shift-add -> accumulate ->
fold -> dequantize.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..config import HardwareConfig
from ..crossbar import AdcRecorder, MappedLayer, critical_loop
from ..errors import ConfigError
from ..mapper import PrecisionConfig, conv_output_size, im2col, slice_weights
from ..quantizer import (CalibrationKind, CalibrationMethod, QuantizedTensor, QuantParams, calibrate,
                         dequantize, quantize)
from .dcim import dcim_matmul
from .lut import Lut8, gelu, lut_apply, softmax_via_lut

INPUT = "input"
LUT_FUNCS = {"gelu": gelu, "identity": lambda v: v}


class LayerKind(str, enum.Enum):
    LINEAR = "linear"
    CONV2D = "conv2d"
    RELU = "relu"
    MAXPOOL = "maxpool"
    AVGPOOL = "avgpool"
    FLATTEN = "flatten"
    LUT = "lut"
    DCIM_MATMUL = "dcim_matmul"
    RESIDUAL = "residual"


class Engine(str, enum.Enum):
    ACIM = "acim"
    DCIM = "dcim"
    DIGITAL = "digital"


_ENGINE = {LayerKind.LINEAR: Engine.ACIM, LayerKind.CONV2D: Engine.ACIM, LayerKind.DCIM_MATMUL: Engine.DCIM}


@dataclass
class LayerNode:
    """One graph node.

    ``inputs`` names producer nodes (default: the previous node). Linear
    weights are stored (in_features, out_features); conv weights
    (C_out, C_in, k_h, k_w). ``exempt`` keeps a matmul layer in float.
    """

    name: str
    kind: LayerKind
    params: dict = field(default_factory=dict)
    inputs: tuple = ()
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    exempt: bool = False
    in_params: list = field(default_factory=list)
    w_params: Optional[QuantParams] = None
    out_params: Optional[QuantParams] = None
    lut: Optional[Lut8] = None

    def __post_init__(self):
        self.kind = LayerKind(self.kind)
        self.inputs = tuple(self.inputs)

    @property
    def engine(self) -> Engine:
        if self.exempt:
            return Engine.DIGITAL
        return _ENGINE.get(self.kind, Engine.DIGITAL)

    @property
    def is_matmul(self) -> bool:
        return self.kind in (LayerKind.LINEAR, LayerKind.CONV2D)

    def weight_matrix(self) -> np.ndarray:
        """Weights as the (N, M) matrix the crossbar sees."""
        if self.kind is LayerKind.CONV2D:
            return self.weight.reshape(self.weight.shape[0], -1).T
        return self.weight


@dataclass
class Model:
    nodes: list
    precision: Optional[PrecisionConfig] = None

    def __post_init__(self):
        names = set()
        for i, n in enumerate(self.nodes):
            if n.name in names or n.name == INPUT:
                raise ConfigError(f"duplicate node name '{n.name}'")
            if not n.inputs:
                n.inputs = (self.nodes[i - 1].name if i else INPUT,)
            for src in n.inputs:
                if src != INPUT and src not in names:
                    raise ConfigError(f"node '{n.name}' reads '{src}' before it is defined")
            names.add(n.name)

    @property
    def calibrated(self) -> bool:
        return self.precision is not None

    def acim_layers(self) -> list:
        return [n for n in self.nodes if n.engine is Engine.ACIM]

    def layer_ids(self) -> dict:
        return {n.name: i for i, n in enumerate(self.nodes)}


@dataclass
class InferenceResult:
    logits: np.ndarray
    taps: dict = field(default_factory=dict)
    recorder: Optional[AdcRecorder] = None


def _pool(x: np.ndarray, k: int, stride: int, op) -> np.ndarray:
    b, c, h, w = x.shape
    oh, ow = conv_output_size(h, w, k, k, stride, 0)
    out = np.empty((b, c, oh, ow))
    for i in range(oh):
        for j in range(ow):
            out[:, :, i, j] = op(x[:, :, i * stride:i * stride + k, j * stride:j * stride + k], axis=(2, 3))
    return out


def _conv_float(x: np.ndarray, node: LayerNode) -> np.ndarray:
    kh, kw = node.weight.shape[2:]
    stride, pad = node.params.get("stride", 1), node.params.get("pad", 0)
    cols = im2col(x, (kh, kw), stride, pad)
    oh, ow = conv_output_size(x.shape[2], x.shape[3], kh, kw, stride, pad)
    y = cols @ node.weight_matrix()
    return y.reshape(x.shape[0], oh, ow, -1).transpose(0, 3, 1, 2)


def _add_bias(y: np.ndarray, node: LayerNode) -> np.ndarray:
    if node.bias is None:
        return y
    if node.kind is LayerKind.CONV2D:
        return y + node.bias[None, :, None, None]
    return y + node.bias


class _Executor:
    """Runs the graph in one of three modes: float, quant (integer reference) or cim."""

    def __init__(self, model: Model, mode: str, hw: HardwareConfig | None = None,
                 recorder: AdcRecorder | None = None):
        self.model, self.mode, self.hw, self.recorder = model, mode, hw, recorder
        self.mapped: dict = {}
        self.captured: dict = {}
        if mode == "cim":
            ids = model.layer_ids()
            for n in model.acim_layers():
                tm = slice_weights(quantize(n.weight_matrix(), n.w_params), hw.precision,
                                   hw.array.rows, hw.array.cols, name=n.name)
                self.mapped[n.name] = MappedLayer.build(tm, hw.array, hw.noise, hw.seed, ids[n.name])
            self.adc = hw.adc()

    def run(self, x: np.ndarray, capture_inputs: bool = False) -> dict:
        outs = {INPUT: np.asarray(x, dtype=np.float64)}
        for n in self.model.nodes:
            args = [outs[s] for s in n.inputs]
            if capture_inputs:
                self.captured[n.name] = args
            outs[n.name] = self.node(n, args)
        return outs

    def _int_matmul(self, n: LayerNode, q: QuantizedTensor, wq: QuantizedTensor) -> np.ndarray:
        if self.mode == "cim":
            return critical_loop(self.mapped[n.name], q.data, self.adc, signed_inputs=q.params.signed,
                                 recorder=self.recorder, jobs=self.hw.jobs)
        return q.data @ wq.data

    def node(self, n: LayerNode, args: list) -> np.ndarray:
        k = n.kind
        x = args[0]
        if k is LayerKind.RELU:
            return np.maximum(x, 0.0)
        if k is LayerKind.FLATTEN:
            return x.reshape(x.shape[0], -1)
        if k is LayerKind.MAXPOOL:
            return _pool(x, n.params["kernel"], n.params.get("stride", n.params["kernel"]), np.max)
        if k is LayerKind.AVGPOOL:
            return _pool(x, n.params["kernel"], n.params.get("stride", n.params["kernel"]), np.mean)
        if k is LayerKind.RESIDUAL:
            return args[0] + args[1]
        if k is LayerKind.LUT:
            return self._lut(n, x)
        if k is LayerKind.DCIM_MATMUL:
            return self._dcim(n, args[0], args[1])
        if n.is_matmul:
            if self.mode == "float" or n.exempt:
                return _add_bias(_conv_float(x, n) if k is LayerKind.CONV2D else x @ n.weight, n)
            return self._acim(n, x)
        raise ConfigError(f"unsupported layer kind {k}")

    def _acim(self, n: LayerNode, x: np.ndarray) -> np.ndarray:
        if not n.in_params or n.w_params is None:
            raise ConfigError(f"layer '{n.name}' has no calibration data")
        wq = quantize(n.weight_matrix(), n.w_params)
        q = quantize(x, n.in_params[0])
        scale = n.in_params[0].scale * n.w_params.scale
        if n.kind is LayerKind.CONV2D:
            kh, kw = n.weight.shape[2:]
            stride, pad = n.params.get("stride", 1), n.params.get("pad", 0)
            cols = im2col(q.data, (kh, kw), stride, pad)
            b, p, klen = cols.shape
            acc = self._int_matmul(n, QuantizedTensor(cols.reshape(b * p, klen), q.params), wq)
            oh, ow = conv_output_size(x.shape[2], x.shape[3], kh, kw, stride, pad)
            y = acc.reshape(b, oh, ow, -1).transpose(0, 3, 1, 2) * scale
        else:
            lead = q.data.shape[:-1]
            acc = self._int_matmul(n, QuantizedTensor(q.data.reshape(-1, q.data.shape[-1]), q.params), wq)
            y = acc.reshape(lead + (acc.shape[-1],)) * scale
        return _add_bias(y, n)

    def _lut(self, n: LayerNode, x: np.ndarray) -> np.ndarray:
        fn = n.params["fn"]
        if self.mode == "float":
            if fn == "softmax":
                e = np.exp(x - x.max(axis=-1, keepdims=True))
                return e / e.sum(axis=-1, keepdims=True)
            return LUT_FUNCS[fn](x)
        if not n.in_params:
            raise ConfigError(f"layer '{n.name}' has no calibration data")
        q = quantize(x, n.in_params[0])
        if fn == "softmax":
            return dequantize(softmax_via_lut(q))
        return dequantize(lut_apply(q, n.lut))

    def _dcim(self, n: LayerNode, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if n.params.get("transpose_b"):
            b = np.swapaxes(b, -1, -2)
        alpha = n.params.get("alpha", 1.0)
        if self.mode == "float":
            return alpha * (a @ b)
        if len(n.in_params) != 2 or n.out_params is None:
            raise ConfigError(f"layer '{n.name}' has no calibration data")
        qa, qb = quantize(a, n.in_params[0]), quantize(b, n.in_params[1])
        return dequantize(dcim_matmul(qa, qb, n.out_params)) * alpha


def calibrate_model(model: Model, batches: Sequence[np.ndarray], precision: PrecisionConfig,
                    method: CalibrationMethod | None = None) -> Model:
    """Set weight and activation quantization parameters in place.

    Weights use max calibration at b_w bits; activations use ``method``
    (percentile by default) at b_in bits, unsigned when every calibration
    sample is non-negative. LUT and DCIM operands are 8-bit.
    """
    method = method or CalibrationMethod()
    maxcal = CalibrationMethod(CalibrationKind.MAX)
    ex = _Executor(model, "float")
    seen: dict = {}
    outs: dict = {}
    for b in batches:
        res = ex.run(b, capture_inputs=True)
        for n in model.nodes:
            seen.setdefault(n.name, []).append(ex.captured[n.name])
            outs.setdefault(n.name, []).append(res[n.name])

    def act(samples, bits, meth=method, signed=None):
        if signed is None:
            signed = any((s < 0).any() for s in samples)
        return calibrate(samples, meth, bits=bits, signed=signed)

    for n in model.nodes:
        args = seen[n.name]
        if n.is_matmul and not n.exempt:
            n.w_params = calibrate([n.weight], maxcal, bits=precision.b_w, signed=True)
            n.in_params = [act([a[0] for a in args], precision.b_in)]
        elif n.kind is LayerKind.LUT:
            fn = n.params["fn"]
            n.in_params = [act([a[0] for a in args], 8, signed=True)]
            if fn != "softmax":
                n.out_params = act(outs[n.name], 8, maxcal, signed=True)
                n.lut = Lut8.build(LUT_FUNCS[fn], n.in_params[0], n.out_params)
        elif n.kind is LayerKind.DCIM_MATMUL:
            alpha = n.params.get("alpha", 1.0)
            tb = n.params.get("transpose_b", False)
            n.in_params = [act([a[0] for a in args], precision.b_in, signed=True),
                           act([np.swapaxes(a[1], -1, -2) if tb else a[1] for a in args], precision.b_in,
                               signed=True)]
            # scale of the raw product, before alpha
            n.out_params = act([o / alpha for o in outs[n.name]], 8, maxcal, signed=True)
    model.precision = precision
    return model


def _check(model: Model, hw: HardwareConfig) -> None:
    if not model.calibrated:
        raise ConfigError("model is not calibrated")
    if (model.precision.b_in, model.precision.b_w) != (hw.precision.b_in, hw.precision.b_w):
        raise ConfigError(f"model calibrated for {model.precision.b_in}b/{model.precision.b_w}b but the "
                          f"hardware uses {hw.precision.b_in}b/{hw.precision.b_w}b")


def reference_inference(model: Model, batch: np.ndarray, mode: str = "quant") -> np.ndarray:
    """Float or pure-quantization (exact integer matmul) forward pass."""
    if mode == "quant" and not model.calibrated:
        raise ConfigError("model is not calibrated")
    return _Executor(model, mode).run(batch)[model.nodes[-1].name]


def run_inference(model: Model, batch: np.ndarray, hw: HardwareConfig, record_taps: bool = False,
                  recorder: AdcRecorder | None = None) -> InferenceResult:
    """Execute the model with matmul layers on simulated crossbars.

    With ``record_taps`` every node's output is paired with the same node's
    output from the noiseless pure-quantization reference.
    """
    _check(model, hw)
    outs = _Executor(model, "cim", hw, recorder).run(batch)
    taps = {}
    if record_taps:
        ideal = _Executor(model, "quant").run(batch)
        taps = {n.name: (ideal[n.name], outs[n.name]) for n in model.nodes}
    return InferenceResult(outs[model.nodes[-1].name], taps, recorder)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((np.argmax(logits, axis=-1) == labels).mean())


def output_shapes(model: Model, input_shape: Sequence[int]) -> dict:
    """Shape of every node output for a batch-1 input of ``input_shape``."""
    outs = _Executor(model, "float").run(np.zeros((1,) + tuple(input_shape)))
    return {k: v.shape[1:] for k, v in outs.items()}
