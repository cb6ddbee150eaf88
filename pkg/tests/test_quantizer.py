import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cimsim.errors import CalibrationError, CalibrationWarning, QuantizeError
from cimsim.quantizer import (AbsHistogram, CalibrationKind, CalibrationMethod, QuantizedTensor, QuantParams,
                              calibrate, dequantize, quantize, write_calibration_csv)

MAX = CalibrationMethod(CalibrationKind.MAX)
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_max_calibration_formula():
    p = calibrate([np.array([-2.0, 1.0])], MAX, bits=8)
    assert p.scale == 2.0 / 127
    assert not p.degenerate


def test_max_unsigned_uses_full_range():
    p = calibrate([np.array([0.0, 3.0])], MAX, bits=8, signed=False)
    assert p.scale == 3.0 / 255


def test_all_zero_samples_give_epsilon_with_warning():
    with pytest.warns(CalibrationWarning):
        p = calibrate([np.zeros(10)], MAX, bits=8)
    assert p.scale == 1e-12 and p.degenerate


def test_empty_stream_raises():
    with pytest.raises(CalibrationError):
        calibrate([], MAX)
    with pytest.raises(CalibrationError):
        calibrate([np.array([np.nan])], MAX)


def test_percentile_on_uniform_grid_matches_bruteforce_cdf():
    x = np.linspace(-1, 1, 200_001)
    p = calibrate([x[::2], x[1::2]], CalibrationMethod(CalibrationKind.PERCENTILE, 0.9999), bits=8)
    # brute-force CDF of |x|: smallest value with at least 99.99% of samples at or below it
    a = np.sort(np.abs(x))
    v = a[int(np.ceil(0.9999 * a.size)) - 1]
    bin_w = 1.0 / 2048
    assert abs(p.scale * 127 - v) <= bin_w
    assert abs(p.scale - 1.0 / 127) <= bin_w / 127 + 1e-15


def test_percentile_one_equals_max_within_a_bin(rng):
    x = rng.normal(size=5000)
    pm = calibrate([x], MAX)
    pp = calibrate([x], CalibrationMethod(CalibrationKind.PERCENTILE, 1.0))
    assert abs(pp.scale - pm.scale) * 127 <= np.abs(x).max() / 2048 + 1e-12


def test_caller_owned_histogram_is_filled(rng):
    h = AbsHistogram()
    calibrate([rng.normal(size=100)], CalibrationMethod(), histogram=h)
    assert h.counts.sum() == 100 and h.counts.size == 2048


def test_invalid_percentile():
    with pytest.raises(Exception):
        CalibrationMethod(CalibrationKind.PERCENTILE, 0.0)
    with pytest.raises(Exception):
        CalibrationMethod(CalibrationKind.PERCENTILE, 1.5)


def test_quantize_examples():
    p = QuantParams(2 / 127, 8)
    assert quantize(1.0, p).data == 64  # 63.5 rounds away from zero
    assert quantize(-1.0, p).data == -64
    assert quantize(0.0, p).data == 0
    assert quantize(1000.0, p).data == 127
    assert quantize(-1000.0, p).data == -128


def test_dequantize_examples():
    p = QuantParams(2 / 127, 8)
    assert dequantize(QuantizedTensor(np.array(64), p)) == pytest.approx(128 / 127)
    assert dequantize(QuantizedTensor(np.array(0), p)) == 0.0


def test_nan_reports_indices():
    x = np.zeros((2, 3))
    x[1, 2] = np.nan
    x[0, 1] = np.inf
    with pytest.raises(QuantizeError) as ei:
        quantize(x, QuantParams(0.1, 8))
    assert set(ei.value.indices) == {(1, 2), (0, 1)}


def test_out_of_range_tensor_rejected():
    with pytest.raises(Exception):
        QuantizedTensor(np.array([128]), QuantParams(1.0, 8))


def test_lattice_roundtrip_exact():
    p = QuantParams(0.25, 6)
    k = np.arange(p.qmin, p.qmax + 1)
    assert np.array_equal(dequantize(quantize(k * p.scale, p)), k * p.scale)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.floats(1e-3, 2.0), st.integers(2, 16),
       st.booleans())
def test_bounded_error(x, scale, bits, signed):
    p = QuantParams(scale, bits, signed)
    err = np.abs(dequantize(quantize(x, p)) - np.clip(x, p.qmin * scale, p.qmax * scale))
    assert (err <= scale / 2 * (1 + 1e-12)).all()


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 20, elements=finite), arrays(np.float64, 20, elements=st.floats(0, 10)),
       st.floats(1e-3, 2.0))
def test_monotone(x, d, scale):
    p = QuantParams(scale, 8)
    assert (quantize(x, p).data <= quantize(x + d, p).data).all()


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.integers(2, 16), st.booleans())
def test_max_calibration_reproduces_top_code(x, bits, signed):
    if not signed:
        x = np.abs(x)
    if not np.abs(x).max() > 1e-6:  # below that the epsilon floor takes over
        return
    p = calibrate([x], MAX, bits=bits, signed=signed)
    assert quantize(np.abs(x).max(), p).data == p.qmax


def test_calibration_csv(tmp_path):
    path = tmp_path / "c.csv"
    write_calibration_csv(path, [("fc1", MAX, QuantParams(0.5, 8)), ("fc1.input0", CalibrationMethod(),
                                                                      QuantParams(0.25, 8, False))])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["layer", "method", "scale", "bits"]
    assert rows[1] == ["fc1", "max", "0.5", "8"]
    assert rows[2][1].startswith("percentile")


def test_no_warning_for_normal_data(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        calibrate([rng.normal(size=10)])
