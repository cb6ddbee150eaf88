import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cimsim.config import HardwareConfig
from cimsim.crossbar import ArrayConfig
from cimsim.errors import AccumError, ConfigError
from cimsim.mapper import PrecisionConfig
from cimsim.netexec import (LayerKind, LayerNode, Lut8, Model, accuracy, calibrate_model, dcim_matmul, gelu,
                            load_model, lut_apply, output_shapes, reference_inference, run_inference, save_model,
                            softmax_via_lut)
from cimsim.netexec.fixture import Dataset, make_blobs
from cimsim.quantizer import QuantizedTensor, QuantParams, quantize

HW = HardwareConfig(array=ArrayConfig(rows=32, cols=32))


def test_fixture_trains_above_95(mlp):
    fx, _ = mlp
    assert accuracy(reference_inference(fx.model, fx.eval.x, "float"), fx.eval.y) >= 0.95


def test_zero_noise_matches_quant_baseline_exactly(mlp):
    fx, _ = mlp
    x = fx.eval.x[:300]
    for hw in (HardwareConfig(), HW, HardwareConfig(precision=PrecisionConfig(b_cell=4, p_dac=2))):
        assert np.array_equal(run_inference(fx.model, x, hw).logits, reference_inference(fx.model, x))


def test_blobs_deterministic():
    a, b = make_blobs(50, seed=3), make_blobs(50, seed=3)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_zero_input_bias_free_propagates_zero(rng):
    m = Model([LayerNode("a", LayerKind.LINEAR, weight=rng.normal(size=(6, 5))), LayerNode("r", LayerKind.RELU),
               LayerNode("b", LayerKind.LINEAR, weight=rng.normal(size=(5, 3)))])
    calibrate_model(m, [rng.normal(size=(64, 6))], PrecisionConfig())
    assert np.all(run_inference(m, np.zeros((4, 6)), HW).logits == 0)


def test_identity_layer_within_one_step(rng):
    m = Model([LayerNode("id", LayerKind.LINEAR, weight=np.eye(8))])
    x = rng.normal(size=(50, 8))
    calibrate_model(m, [x], PrecisionConfig())
    y = run_inference(m, x, HW).logits
    step = m.nodes[0].in_params[0].scale
    clipped = np.clip(x, -127 * step, 127 * step)
    assert np.abs(y - clipped).max() <= step * (1 + 1e-9)


def test_uncalibrated_and_mismatched_precision(rng):
    m = Model([LayerNode("id", LayerKind.LINEAR, weight=np.eye(2))])
    with pytest.raises(ConfigError):
        run_inference(m, np.zeros((1, 2)), HW)
    calibrate_model(m, [rng.normal(size=(8, 2))], PrecisionConfig(b_in=4, b_w=4))
    with pytest.raises(ConfigError):
        run_inference(m, np.zeros((1, 2)), HW)


def test_conv_pool_residual_network_exact(rng):
    nodes = [
        LayerNode("c1", LayerKind.CONV2D, params={"stride": 1, "pad": 1}, weight=rng.normal(size=(4, 2, 3, 3)),
                  bias=rng.normal(size=4)),
        LayerNode("r1", LayerKind.RELU),
        LayerNode("c2", LayerKind.CONV2D, params={"pad": 1}, weight=rng.normal(size=(4, 4, 3, 3))),
        LayerNode("res", LayerKind.RESIDUAL, inputs=("r1", "c2")),
        LayerNode("p", LayerKind.MAXPOOL, params={"kernel": 2}),
        LayerNode("ap", LayerKind.AVGPOOL, params={"kernel": 2}),
        LayerNode("f", LayerKind.FLATTEN),
        LayerNode("fc", LayerKind.LINEAR, weight=rng.normal(size=(4, 3))),
    ]
    m = Model(nodes)
    x = rng.normal(size=(6, 2, 4, 4))
    calibrate_model(m, [x[:3], x[3:]], PrecisionConfig())
    hw = HardwareConfig(array=ArrayConfig(rows=16, cols=16))
    assert np.array_equal(run_inference(m, x, hw).logits, reference_inference(m, x))
    shapes = output_shapes(m, (2, 4, 4))
    assert shapes["c1"] == (4, 4, 4) and shapes["p"] == (4, 2, 2) and shapes["fc"] == (3,)


def test_exempt_first_layer_stays_float(rng):
    w = rng.normal(size=(4, 4))
    m = Model([LayerNode("a", LayerKind.LINEAR, weight=w, exempt=True)])
    x = rng.normal(size=(3, 4))
    calibrate_model(m, [x], PrecisionConfig())
    assert np.allclose(run_inference(m, x, HW).logits, x @ w)


def test_graph_validation():
    with pytest.raises(ConfigError):
        Model([LayerNode("a", LayerKind.RELU, inputs=("b",)), LayerNode("b", LayerKind.RELU)])
    with pytest.raises(ConfigError):
        Model([LayerNode("a", LayerKind.RELU), LayerNode("a", LayerKind.RELU)])


def test_identity_lut():
    p = QuantParams(0.1, 8)
    x = QuantizedTensor(np.arange(-128, 128), p)
    assert np.array_equal(lut_apply(x, Lut8.identity(p)).data, x.data)


def test_gelu_lut_zero_and_accuracy():
    pin, pout = QuantParams(4.0 / 127, 8), QuantParams(4.0 / 127, 8)
    lut = Lut8.build(gelu, pin, pout)
    assert lut_apply(quantize(np.array([0.0]), pin), lut).data[0] == 0
    xs = np.linspace(-4, 4, 4001)
    approx = lut_apply(quantize(xs, pin), lut).data * pout.scale
    # one output step plus the input quantization error through |gelu'| <= 1.13
    bound = pout.scale + 1.13 * pin.scale / 2
    assert np.abs(approx - gelu(xs)).max() <= bound


def test_lut_rejects_wrong_width():
    lut = Lut8.identity(QuantParams(0.1, 8))
    with pytest.raises(ConfigError):
        lut_apply(QuantizedTensor(np.zeros(2, int), QuantParams(0.1, 4)), lut)


def test_dcim_identity_and_oracle(rng):
    x = QuantizedTensor(rng.integers(-128, 128, size=(2, 5)), QuantParams(1.0, 8))
    eye = QuantizedTensor(np.eye(2, dtype=np.int64), QuantParams(1.0, 8))
    assert np.array_equal(dcim_matmul(eye, x), x.data)
    a = rng.integers(-128, 128, size=(7, 33))
    b = rng.integers(-128, 128, size=(33, 9))
    oracle = np.array([[sum(int(a[i, k]) * int(b[k, j]) for k in range(33)) for j in range(9)] for i in range(7)])
    got = dcim_matmul(QuantizedTensor(a, QuantParams(1.0, 8)), QuantizedTensor(b, QuantParams(1.0, 8)))
    assert np.array_equal(got, oracle)


def test_dcim_overflow():
    big = QuantizedTensor(np.full((1, 70_000), -32768), QuantParams(1.0, 16))
    with pytest.raises(AccumError):
        dcim_matmul(big, QuantizedTensor(np.full((70_000, 1), -32768), QuantParams(1.0, 16)))


def test_softmax_uniform_and_dominant():
    p = QuantParams(0.05, 8)
    out = softmax_via_lut(QuantizedTensor(np.full((1, 8), 17), p)).data
    assert out.max() - out.min() <= 1
    row = np.full((1, 8), -128)
    row[0, 3] = 127
    out = softmax_via_lut(QuantizedTensor(row, p))
    assert out.data[0, 3] * out.params.scale >= 0.9


@settings(max_examples=200, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 4), st.integers(1, 32)), elements=st.integers(-128, 127)),
       st.floats(1e-3, 1.0))
def test_softmax_rows_sum_to_one(codes, scale):
    out = softmax_via_lut(QuantizedTensor(codes, QuantParams(scale, 8)))
    sums = out.data.sum(axis=-1) * out.params.scale
    eps = 2 * out.params.scale * codes.shape[-1]
    assert np.all(np.abs(sums - 1.0) <= eps)


def test_manifest_roundtrip(tmp_path, mlp):
    fx, _ = mlp
    save_model(fx.model, tmp_path / "m", (16,))
    m, shape = load_model(tmp_path / "m")
    assert shape == (16,)
    assert m.calibrated and m.precision == fx.model.precision
    for a, b in zip(m.nodes, fx.model.nodes):
        assert a.name == b.name and a.kind == b.kind
        if b.weight is not None:
            assert np.array_equal(a.weight, b.weight.astype(np.float32))
    raw = np.fromfile(tmp_path / "m" / "fc1.weight.bin", dtype="<f4")
    assert raw.size == 16 * 32


def test_manifest_roundtrip_luts(tmp_path, rng):
    from cimsim.netexec.fixture import attention_model
    m = attention_model()
    x = rng.normal(size=(4, 8, 16))
    calibrate_model(m, [x], PrecisionConfig())
    m.nodes.append(LayerNode("g", LayerKind.LUT, params={"fn": "gelu"}, inputs=("context",)))
    m = Model(m.nodes)
    calibrate_model(m, [x], PrecisionConfig())
    save_model(m, tmp_path / "a", (8, 16))
    back, _ = load_model(tmp_path / "a")
    assert np.array_equal(reference_inference(back, x.astype(np.float32)),
                          reference_inference(copy.deepcopy(back), x.astype(np.float32)))
    assert np.array_equal(back.nodes[-1].lut.table, m.nodes[-1].lut.table)


def test_dataset_save_load(tmp_path):
    d = make_blobs(10)
    d.save(tmp_path / "d.npz")
    e = Dataset.load(tmp_path / "d.npz")
    assert np.array_equal(d.x, e.x) and np.array_equal(d.y, e.y)
