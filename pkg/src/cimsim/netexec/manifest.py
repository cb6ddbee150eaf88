"""Model manifest: JSON layer list plus little-endian float32 weight blobs."""
from __future__ import annotations

import json
import os

import numpy as np

from ..errors import ConfigError
from ..mapper import PrecisionConfig
from ..quantizer import QuantParams
from .graph import LUT_FUNCS, LayerNode, Model
from .lut import Lut8

FORMAT_VERSION = 1


def _qp(p: QuantParams | None):
    return None if p is None else {"scale": p.scale, "bits": p.bits, "signed": p.signed}


def _from_qp(d):
    return None if d is None else QuantParams(float(d["scale"]), int(d["bits"]), bool(d["signed"]))


def _write_blob(directory: str, name: str, arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    arr.tofile(os.path.join(directory, name))
    return {"file": name, "shape": list(arr.shape)}


def _read_blob(directory: str, ref: dict) -> np.ndarray:
    path = os.path.join(directory, ref["file"])
    data = np.fromfile(path, dtype="<f4")
    shape = tuple(ref["shape"])
    if data.size != int(np.prod(shape)):
        raise ConfigError(f"{path}: expected {int(np.prod(shape))} floats, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def save_model(model: Model, directory, input_shape) -> None:
    os.makedirs(directory, exist_ok=True)
    layers = []
    for n in model.nodes:
        entry = {"name": n.name, "kind": n.kind.value, "inputs": list(n.inputs), "params": n.params,
                 "exempt": n.exempt, "in_params": [_qp(p) for p in n.in_params], "w_params": _qp(n.w_params),
                 "out_params": _qp(n.out_params)}
        if n.weight is not None:
            entry["weight"] = _write_blob(directory, f"{n.name}.weight.bin", n.weight)
        if n.bias is not None:
            entry["bias"] = _write_blob(directory, f"{n.name}.bias.bin", n.bias)
        layers.append(entry)
    prec = model.precision
    doc = {"format": FORMAT_VERSION, "input_shape": list(input_shape), "layers": layers,
           "precision": None if prec is None else {"b_in": prec.b_in, "b_w": prec.b_w, "b_cell": prec.b_cell,
                                                   "p_dac": prec.p_dac}}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_model(directory) -> tuple:
    """Return (model, input_shape)."""
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"model manifest not found: {path}") from None
    nodes = []
    for e in doc["layers"]:
        n = LayerNode(e["name"], e["kind"], params=e.get("params", {}), inputs=tuple(e.get("inputs", ())),
                      exempt=e.get("exempt", False),
                      weight=_read_blob(directory, e["weight"]) if "weight" in e else None,
                      bias=_read_blob(directory, e["bias"]) if "bias" in e else None,
                      in_params=[_from_qp(p) for p in e.get("in_params", [])],
                      w_params=_from_qp(e.get("w_params")), out_params=_from_qp(e.get("out_params")))
        fn = n.params.get("fn")
        if fn in LUT_FUNCS and n.in_params and n.out_params is not None:
            n.lut = Lut8.build(LUT_FUNCS[fn], n.in_params[0], n.out_params)
        nodes.append(n)
    prec = doc.get("precision")
    model = Model(nodes, None if prec is None else PrecisionConfig(**prec))
    return model, tuple(doc["input_shape"])
