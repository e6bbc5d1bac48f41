import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from teleopsim import engine, estimation as es, neural
from teleopsim import trajectory as tr
from teleopsim.environment import TissueParams


def _inputs(t=0.0, F=1.0, d=0.01, v=0.0):
    return es.EstimatorInputs(t, d, v, d, F, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("fc,fs", [(1.0, 400.0), (100.0, 1000.0), (5.0, 60.0)])
def test_lowpass_coefficients_match_scipy(fc, fs):
    f = es.LowPass2(fc, fs)
    b, a = signal.butter(2, fc, fs=fs)
    assert np.allclose(f.b, b, rtol=1e-12, atol=0)
    assert np.allclose(f.a, a, rtol=1e-12, atol=0)
    u = np.random.default_rng(0).normal(size=500)
    assert np.allclose(f.filter(u), signal.lfilter(b, a, u), rtol=1e-10, atol=1e-12)


def test_lowpass_step_matches_continuous_butterworth():
    # continuous unit-step response of a 2nd-order Butterworth at 1 Hz
    wc = 2 * math.pi
    z = 1 / math.sqrt(2)
    wd = wc * math.sqrt(1 - z * z)
    t = np.arange(800) / 400.0
    y_c = 1 - np.exp(-z * wc * t) * (np.cos(wd * t) + z / math.sqrt(1 - z * z) * np.sin(wd * t))
    y = es.LowPass2(1.0, 400.0).filter(np.ones_like(t))
    assert np.max(np.abs(y - y_c)) < 0.005
    # analytic 90 % rise time 0.4223 s; the discrete filter crosses within one sample
    t90 = t[np.argmax(y >= 0.9)]
    assert abs(t90 - 0.42231491403163646) <= 1 / 400.0


def test_lowpass_dc_and_cutoff_gain():
    f = es.LowPass2(1.0, 400.0)
    assert f.filter(np.full(4000, 3.5))[-1] == pytest.approx(3.5, rel=1e-9)
    t = np.arange(400 * 20) / 400.0
    out = es.LowPass2(1.0, 400.0).filter(np.sin(2 * np.pi * t))
    assert np.abs(out[-400 * 5:]).max() == pytest.approx(1 / math.sqrt(2), rel=0.02)


def test_lowpass_reset_is_steady_state():
    f = es.LowPass2(1.0, 400.0)
    f.reset(2.0)
    assert [f.step(2.0) for _ in range(5)] == pytest.approx([2.0] * 5, abs=1e-12)


@pytest.mark.parametrize("fc", [0.0, -1.0, 200.0, 500.0])
def test_lowpass_invalid_cutoff(fc):
    with pytest.raises(es.ConfigError):
        es.LowPass2(fc, 400.0)


def test_ground_truth_identity():
    e = es.Estimator(es.GroundTruth())
    assert es.estimate(e, _inputs(F=1.234)) == 1.234


def test_behavioral_saturation():
    e = es.Estimator(es.Behavioral(gain=1.0, saturation_force=2.0))
    assert es.estimate(e, _inputs(F=5.0)) == 2.0
    assert es.estimate(e, _inputs(t=0.01, F=-5.0)) == -2.0


def test_behavioral_latency_and_hysteresis():
    spec = es.Behavioral(latency=0.02, hysteresis_offset=0.1)
    e = es.Estimator(spec)
    for k in range(10):
        e.push(_inputs(t=k * 0.01, F=float(k), d=0.01, v=0.1))
    assert e.estimate(0.09) == 7.0  # F at t = 0.07
    e.push(_inputs(t=0.10, F=10.0, d=0.01, v=-0.1))  # unloading
    assert e.estimate(0.10) == pytest.approx(8.0 + 0.1)


def test_behavioral_overshoot_uses_current_velocity():
    e = es.Estimator(es.Behavioral(velocity_overshoot_gain=4.0))
    assert es.estimate(e, _inputs(F=1.0, v=0.05)) == pytest.approx(1.2)


def test_invalid_behavioral():
    with pytest.raises(es.ConfigError):
        es.Behavioral(gain=0.0)
    with pytest.raises(es.ConfigError):
        es.Behavioral(latency=-1.0)


def test_neural_errors():
    with pytest.raises(es.ConfigError):
        es.Estimator(es.Neural(model=None))
    m = neural.Mlp.init([3, 4, 1])
    with pytest.raises(es.ConfigError):
        es.Estimator(es.Neural(model=m, features=("psm_position", "psm_velocity")))
    with pytest.raises(es.ConfigError):
        es.Estimator(es.Neural(model=m, features=("psm_position", "psm_velocity", "F_true")))


def test_neural_prev_estimate_feature():
    m = neural.Mlp([1, 1], [np.array([[0.5]])], [np.array([1.0])], ("prev_estimate",),
                   activation="identity")
    e = es.Estimator(es.Neural(model=m, features=("prev_estimate",), latency=0.0))
    outs = [es.estimate(e, _inputs(t=k * 0.01)) for k in range(3)]
    assert outs == [1.0, 1.5, 1.75]


def test_presets_and_dict_round_trip():
    assert es.preset("fs").rate == 1000.0
    assert es.preset("d").rate == 400.0 and es.preset("d").cutoff == 1.0
    assert es.preset("s").rate == 500.0
    assert es.preset("v").rate == es.preset("vs").rate == 60.0
    for name, spec in es.PRESETS.items():
        assert es.spec_from_dict(es.spec_to_dict(spec)) == spec
    with pytest.raises(es.ConfigError):
        es.preset("nope")
    with pytest.raises(es.ConfigError):
        es.spec_from_dict({"type": "magic"})


def test_destabilising_preset_meets_its_definition():
    u = es.preset("unstable")
    assert u.gain > 1 and u.latency >= 0.03 and u.rate == 60.0 and u.velocity_overshoot_gain > 0


def _closed_run(spec, seed=0):
    return engine.run(engine.SimConfig(seed=seed), tr.build_closed_loop("z"), spec, TissueParams())


def test_neutral_behavioral_is_bitwise_ground_truth():
    gt = _closed_run(es.GroundTruth(rate=60.0, name="x"))
    bh = _closed_run(es.Behavioral(rate=60.0, name="x"))
    assert np.array_equal(gt.data, bh.data)


def test_ground_truth_closed_loop_rmse_is_zero():
    from teleopsim.analysis import rmse
    lg = _closed_run(es.preset("fs"))
    assert rmse(lg["F_estimate"], lg["F_ground_truth"]) == 0.0


def test_noise_is_seeded():
    spec = es.GroundTruth(noise_sd=0.1)
    a, b, c = _closed_run(spec, 1), _closed_run(spec, 1), _closed_run(spec, 2)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


@given(st.floats(-5, 5), st.floats(0.5, 2.0), st.floats(-0.5, 0.5))
def test_behavioral_linear_part(F, gain, bias):
    e = es.Estimator(es.Behavioral(gain=gain, bias=bias))
    assert es.estimate(e, _inputs(F=F, v=0.0)) == pytest.approx(gain * F + bias)
