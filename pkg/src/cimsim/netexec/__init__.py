"""Network execution: layer graph, calibration, ACIM/DCIM/LUT dispatch."""
from .dcim import ACC_BITS, dcim_matmul
from .graph import (Engine, InferenceResult, LayerKind, LayerNode, Model, accuracy, calibrate_model,
                    output_shapes, reference_inference, run_inference)
from .lut import Lut8, gelu, lut_apply, softmax_via_lut
from .manifest import load_model, save_model

__all__ = [
    "ACC_BITS", "dcim_matmul", "Engine", "InferenceResult", "LayerKind", "LayerNode", "Model", "accuracy",
    "calibrate_model", "output_shapes", "reference_inference", "run_inference", "Lut8", "gelu", "lut_apply",
    "softmax_via_lut", "load_model", "save_model",
]
