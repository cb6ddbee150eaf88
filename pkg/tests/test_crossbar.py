import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cimsim.crossbar import (AdcConfig, AdcRecorder, ArrayConfig, Domain, MappedLayer, StateTable, adc_quantize,
                             analog_mvm_cycle, critical_loop, lossless_adc_bits, program, required_adc_bits,
                             tile_rng)
from cimsim.errors import ConfigError, InputError
from cimsim.mapper import PrecisionConfig, slice_weights
from cimsim.noise import DeviceNoiseSpec, NoiseSpec, OutputNoiseTable


def build(w, cfg, rows=16, cols=16, states=None, noise=None, seed=0, active=None, domain=Domain.CURRENT):
    arr = ArrayConfig(rows=rows, cols=cols, active_rows=active, states=states, domain=domain)
    return MappedLayer.build(slice_weights(w, cfg, rows, cols), arr, noise, seed), arr


def rand_case(rng, n, m, cfg):
    w = rng.integers(-(1 << (cfg.b_w - 1)), 1 << (cfg.b_w - 1), size=(n, m))
    x = rng.integers(0, 1 << cfg.b_in, size=(3, n))
    return w, x


def test_required_adc_bits_examples():
    assert required_adc_bits(128, 1, 1) == 7
    assert required_adc_bits(64, 1, 2) == 8
    assert required_adc_bits(1, 1, 1) == 1


def test_lossless_bits_power_of_two_case():
    # out_max = 128 needs code 128, one more bit than ceil(log2(128))
    assert lossless_adc_bits(128, 1, 1) == 8
    assert lossless_adc_bits(64, 1, 2) == 8


def test_adc_quantize_examples():
    adc = AdcConfig(7, 128)
    assert adc_quantize(np.array([5 * 0.3]), adc, 0.3)[0] == 5
    assert adc_quantize(np.array([200 * 0.3]), adc, 0.3)[0] == 127
    assert adc_quantize(np.array([5.5]), adc, 1.0)[0] == 6
    assert adc_quantize(np.array([-0.2]), adc, 1.0)[0] == 0


def test_auto_adc_and_offset():
    arr = ArrayConfig(rows=128, cols=128)
    assert AdcConfig.for_array(arr, PrecisionConfig()).p_adc == 8
    assert AdcConfig.for_array(arr, PrecisionConfig(), offset=-1).p_adc == 7
    assert AdcConfig.for_array(arr, PrecisionConfig(), p_adc=5).p_adc == 5


def test_program_noiseless_equals_means():
    st_ = StateTable.linear(2)
    d = np.random.default_rng(0).integers(0, 4, size=(8, 8))
    t = program(d, st_, None)
    assert np.array_equal(t.values, st_.means[d])


def test_program_saf_boundaries(rng):
    st_ = StateTable.linear(1)
    d = rng.integers(0, 2, size=(32, 32))
    t = program(d, st_, DeviceNoiseSpec(d2d_sigmas=(0, 0), p_sa0=1.0), rng)
    assert np.all(t.values == st_.g_min) and np.all(t.saf_mask == 1)
    t = program(d, st_, DeviceNoiseSpec(d2d_sigmas=(0, 0), p_sa1=1.0), rng)
    assert np.all(t.values == st_.g_max) and np.all(t.saf_mask == 2)


def test_program_sigma_length_mismatch(rng):
    with pytest.raises(ConfigError):
        program(np.zeros((2, 2), int), StateTable.linear(1), DeviceNoiseSpec(d2d_sigmas=(0.1, 0.1, 0.1)), rng)


def test_program_d2d_statistics():
    st_ = StateTable.linear(1)
    sig = 0.05 * st_.means
    d = np.zeros(100_000, dtype=int)
    d[50_000:] = 1
    t = program(d.reshape(1000, 100), st_, DeviceNoiseSpec(d2d_sigmas=sig), np.random.default_rng(1))
    v = t.values.ravel()
    for s in (0, 1):
        sample = v[d == s]
        n = sample.size
        assert abs(sample.mean() - st_.means[s]) < 3 * sig[s] / np.sqrt(n)
        assert abs(sample.std(ddof=1) - sig[s]) < 3 * sig[s] / np.sqrt(2 * (n - 1))


def test_analog_cycle_examples(rng):
    st_ = StateTable.linear(2)
    d = rng.integers(0, 4, size=(6, 5))
    t = program(d, st_, None)
    assert np.all(analog_mvm_cycle(t, np.zeros(6, int), st_, 1) == 0)
    x = np.zeros(6, int)
    x[2] = 1
    out = analog_mvm_cycle(t, x, st_, 1)
    assert np.allclose(out, st_.means[d[2]] - st_.g_min, rtol=0, atol=1e-18)
    x = rng.integers(0, 4, size=6)
    out = analog_mvm_cycle(t, x, st_, 2)
    assert np.array_equal(np.rint(out / st_.unit).astype(int), x @ d)


def test_analog_cycle_input_errors():
    st_ = StateTable.linear(1)
    t = program(np.zeros((4, 2), int), st_, None)
    with pytest.raises(InputError):
        analog_mvm_cycle(t, np.array([0, 2, 0, 0]), st_, 1)
    with pytest.raises(InputError):
        analog_mvm_cycle(t, np.zeros(3, int), st_, 1)


def test_identity_passthrough():
    cfg = PrecisionConfig()
    layer, _ = build(np.eye(8, dtype=int) * 3, cfg, 8, 32)
    x = np.arange(8)
    assert np.array_equal(critical_loop(layer, x), 3 * x)


@pytest.mark.parametrize("b_cell", [1, 2, 4])
@pytest.mark.parametrize("p_dac", [1, 2, 4])
def test_single_weight_enumeration(b_cell, p_dac):
    cfg = PrecisionConfig(b_in=4, b_w=4, b_cell=b_cell, p_dac=p_dac)
    for w in range(-8, 8):
        layer, _ = build(np.array([[w]]), cfg, 1, 4)
        xs = np.arange(16)[:, None]
        assert np.array_equal(critical_loop(layer, xs)[:, 0], xs[:, 0] * w)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 12), st.sampled_from([1, 2, 4]), st.sampled_from([1, 2, 4]),
       st.sampled_from([(8, 8), (16, 16), (16, 32)]), st.booleans(), st.integers(0, 2**31))
def test_lossless_theorem(n, m, b_cell, p_dac, shape, signed, seed):
    cfg = PrecisionConfig(b_in=8, b_w=8, b_cell=b_cell, p_dac=p_dac)
    rng = np.random.default_rng(seed)
    w, x = rand_case(rng, n, m, cfg)
    if signed:
        x = x - 128
    layer, _ = build(w, cfg, *shape)
    assert np.array_equal(critical_loop(layer, x, signed_inputs=signed), x @ w)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.sampled_from([1, 2, 4]), st.integers(-3, 0),
       st.integers(0, 2**31))
def test_clipping_monotonicity(n, m, b_cell, off, seed):
    cfg = PrecisionConfig(b_cell=b_cell)
    rng = np.random.default_rng(seed)
    w, x = rand_case(rng, n, m, cfg)
    layer, arr = build(w, cfg, 16, 16)
    hi, lo = AdcRecorder(), AdcRecorder()
    critical_loop(layer, x, AdcConfig.for_array(arr, cfg, offset=off), recorder=hi)
    a_lo = AdcConfig.for_array(arr, cfg, offset=off - 1)
    critical_loop(layer, x, a_lo, recorder=lo)
    assert np.all(lo.arrays(0)[1] <= hi.arrays(0)[1])
    assert lo.arrays(0)[1].max(initial=0) <= a_lo.top_code


def test_domain_equivalence(rng):
    cfg = PrecisionConfig(b_cell=2)
    w, x = rand_case(rng, 20, 5, cfg)
    cur, _ = build(w, cfg, 16, 16, StateTable.linear(2))
    # charge domain: capacitances in fF instead of conductances in S
    chg, _ = build(w, cfg, 16, 16, StateTable.linear(2, 2e-15, 30e-15), domain=Domain.CHARGE)
    assert np.array_equal(critical_loop(cur, x), critical_loop(chg, x))


def test_sub_cycling_is_lossless_and_adc_smaller(rng):
    cfg = PrecisionConfig()
    w, x = rand_case(rng, 40, 4, cfg)
    layer, arr = build(w, cfg, 32, 32, active=8)
    assert arr.sub_cycles == 4
    assert AdcConfig.for_array(arr, cfg).p_adc == lossless_adc_bits(8, 1, 1)
    assert np.array_equal(critical_loop(layer, x), x @ w)


def test_input_range_errors(rng):
    cfg = PrecisionConfig()
    layer, _ = build(np.ones((4, 2), int), cfg, 8, 16)
    with pytest.raises(InputError):
        critical_loop(layer, np.array([256, 0, 0, 0]))
    with pytest.raises(InputError):
        critical_loop(layer, np.array([-1, 0, 0, 0]))
    with pytest.raises(InputError):
        critical_loop(layer, np.zeros(5, int))


def test_tile_rng_independent_of_order():
    a = tile_rng(7, 1, 2, 3).random(4)
    tile_rng(7, 0, 0, 0).random(100)
    assert np.array_equal(a, tile_rng(7, 1, 2, 3).random(4))
    assert not np.array_equal(a, tile_rng(7, 1, 3, 2).random(4))
    assert not np.array_equal(a, tile_rng(7, 1, 2, 3, stream=1).random(4))


def test_noisy_results_independent_of_jobs(rng):
    cfg = PrecisionConfig(b_cell=2)
    w, x = rand_case(rng, 40, 10, cfg)
    st_ = StateTable.linear(2)
    noise = NoiseSpec(device=DeviceNoiseSpec(d2d_sigmas=0.1 * st_.means, p_sa0=0.01))
    layer, _ = build(w, cfg, 16, 16, st_, noise, seed=3)
    assert np.array_equal(critical_loop(layer, x, jobs=1), critical_loop(layer, x, jobs=4))
    circ = NoiseSpec(circuit=OutputNoiseTable.uniform_sigma(0.5))
    layer, _ = build(w, cfg, 16, 16, st_, circ, seed=3)
    assert np.array_equal(critical_loop(layer, x, jobs=1), critical_loop(layer, x, jobs=3))


def test_circuit_identity_table_is_lossless(rng):
    cfg = PrecisionConfig()
    w, x = rand_case(rng, 20, 3, cfg)
    arr = ArrayConfig(rows=16, cols=16)
    adc = AdcConfig.for_array(arr, cfg)
    layer, _ = build(w, cfg, 16, 16, noise=NoiseSpec(circuit=OutputNoiseTable.identity(adc.p_adc)))
    assert np.array_equal(critical_loop(layer, x, adc), x @ w)


def test_state_table_validation(tmp_path):
    with pytest.raises(ConfigError):
        StateTable.linear(1, 1.0, 0.5)
    st_ = StateTable.linear(2, sigmas=[1e-6] * 4)
    st_.to_csv(tmp_path / "s.csv")
    assert StateTable.from_csv(tmp_path / "s.csv") == st_
    (tmp_path / "bad.csv").write_text("level,mean\n0,1\n")
    with pytest.raises(ConfigError):
        StateTable.from_csv(tmp_path / "bad.csv")


def test_active_rows_must_divide():
    with pytest.raises(ConfigError):
        ArrayConfig(rows=128, active_rows=48)
