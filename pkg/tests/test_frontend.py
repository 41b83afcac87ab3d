import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regmeter import frontend as fe
from regmeter.calibration import ACS712_CUBIC, apply
from regmeter.errors import MeterError, SensorError

# real root of the cubic minus 8 A in [0, 1] V, from numpy.roots (independent of bisection)
X_STAR_8A = 0.7833898568061398


def test_root_oracle_matches_frozen_value():
    c = list(ACS712_CUBIC.coefficients)
    c[-1] -= 8.0
    roots = [r.real for r in np.roots(c) if abs(r.imag) < 1e-12 and 0 <= r.real <= 1]
    assert len(roots) == 1
    assert roots[0] == pytest.approx(X_STAR_8A, abs=1e-12)


def test_synthesize_full_period_sine():
    s = fe.synthesize(fe.WaveformSpec(50, [(1, 1.0, 0.0)]), 200, 100)
    assert abs(s.mean()) < 1e-12
    assert np.abs(s).max() <= 1.0


def test_synthesize_harmonic_rms():
    spec = fe.WaveformSpec(50, [(1, 1.0, 0.0), (3, 0.2, 0.0)])
    s = fe.synthesize(spec, 200, 100)
    assert np.sqrt(np.mean(s ** 2)) == pytest.approx(math.sqrt((1 + 0.04) / 2), abs=1e-12)
    assert spec.analytic_rms() == pytest.approx(0.72111, abs=1e-5)


def test_synthesize_empty_components():
    assert np.all(fe.synthesize(fe.WaveformSpec(), 17) == 0)


def test_analytic_rms_merges_same_order():
    spec = fe.WaveformSpec(50, [(1, 1.0, 0.0), (1, 1.0, math.pi)])
    assert spec.analytic_rms() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("n, period", [(0, 100), (-1, 100), (10, 0), (10, -5)])
def test_synthesize_rejects_bad_args(n, period):
    with pytest.raises(MeterError):
        fe.synthesize(fe.WaveformSpec(), n, period)


@pytest.mark.parametrize("kwargs", [
    {"fundamental_frequency": 0},
    {"components": [(0, 1.0, 0.0)]},
    {"components": [(1, -1.0, 0.0)]},
])
def test_waveform_spec_invariants(kwargs):
    with pytest.raises(MeterError):
        fe.WaveformSpec(**kwargs)


def test_sensor_ideal_constant_current():
    out = fe.sensor_transfer(np.ones(5), fe.SensorModel())
    assert np.allclose(out, 2.6)


def test_sensor_zero_current():
    model = fe.SensorModel("polynomial-truth")
    assert np.all(fe.sensor_transfer(np.zeros(8), model) == 2.5)


def test_sensor_polynomial_truth_8a():
    model = fe.SensorModel("polynomial-truth")
    assert fe.effective_sensitivity(model, 8.0) == pytest.approx(X_STAR_8A / 8, abs=1e-10)
    i = fe.synthesize(fe.WaveformSpec(50, [(1, 8 * math.sqrt(2), 0.0)]), 200)
    v = fe.sensor_transfer(i, model, target_rms=8.0)
    x = np.sqrt(np.mean((v - 2.5) ** 2))
    assert x == pytest.approx(X_STAR_8A, abs=1e-9)
    assert apply(ACS712_CUBIC, x) == pytest.approx(8.0, abs=1e-8)


def test_sensor_polynomial_truth_out_of_bracket():
    with pytest.raises(SensorError):
        fe.effective_sensitivity(fe.SensorModel("polynomial-truth"), 50.0)


def test_sensor_rejects_non_monotone_truth():
    with pytest.raises(SensorError):
        fe.SensorModel("polynomial-truth", truth_polynomial=(-20.0, 10.0, 0.0))


@pytest.mark.parametrize("kwargs", [
    {"kind": "magic"}, {"nominal_sensitivity": 0}, {"dc_offset": -0.1}, {"dc_offset": 5.0},
])
def test_sensor_model_invariants(kwargs):
    with pytest.raises(SensorError):
        fe.SensorModel(**kwargs)


@pytest.mark.parametrize("volts, counts", [(0.0, 0), (4.99, 1023), (2.495, 512),
                                           (-1.0, 0), (6.0, 1023)])
def test_quantize(volts, counts):
    assert fe.quantize(volts) == counts


@pytest.mark.parametrize("counts, volts", [(0, 0.0), (1023, 4.99), (512, 512 * 4.99 / 1023)])
def test_to_volts(counts, volts):
    assert fe.to_volts(counts) == pytest.approx(volts, abs=1e-12)


def test_to_volts_512_value():
    assert fe.to_volts(512) == pytest.approx(2.49744, abs=1e-5)


@pytest.mark.parametrize("bad", [-1, 1024])
def test_to_volts_range(bad):
    with pytest.raises(MeterError):
        fe.to_volts(bad)


def test_quantize_round_trip_full_grid():
    c = np.arange(1024)
    assert np.array_equal(fe.quantize(fe.to_volts(c)), c)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_quantize_monotone(a, b):
    lo, hi = sorted((a, b))
    assert fe.quantize(lo) <= fe.quantize(hi)


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=50))
def test_ideal_sensor_preserves_zero_mean(values):
    i = np.array(values + [-v for v in values])
    v = fe.sensor_transfer(i, fe.SensorModel())
    assert abs(np.mean(v - 2.5)) < 1e-12


@given(st.floats(0.05, 9.5))
def test_truth_sensor_rms_matches_root(target):
    model = fe.SensorModel("polynomial-truth")
    i = fe.synthesize(fe.WaveformSpec(50, [(1, target * math.sqrt(2), 0.3)]), 200)
    x = np.sqrt(np.mean((fe.sensor_transfer(i, model, target) - model.dc_offset) ** 2))
    assert apply(ACS712_CUBIC, x) == pytest.approx(target, abs=1e-8)


def test_simulate_true_energy_resistive():
    sim = fe.simulate(fe.PRESETS["type-a"], 5.0, 2000)
    # 230 V * 5 A for 0.2 s
    assert sim.true_energy_wh() == pytest.approx(230 * 5 * 0.2 / 3600, rel=1e-9)


def test_simulate_noise_is_seeded():
    a = fe.simulate(fe.PRESETS["type-b"], 3.0, 400, noise_volts=0.01, rng=np.random.default_rng(1))
    b = fe.simulate(fe.PRESETS["type-b"], 3.0, 400, noise_volts=0.01, rng=np.random.default_rng(1))
    assert np.array_equal(a.i_counts, b.i_counts)


def test_sample_csv_round_trip(tmp_path):
    v = np.array([0, 512, 1023])
    i = np.array([511, 512, 513])
    path = tmp_path / "s.csv"
    fe.write_samples_csv(path, v, i, 100.0)
    assert path.read_text().splitlines()[0] == "index,v_counts,i_counts,sample_period_us"
    v2, i2, period = fe.read_samples_csv(path)
    assert np.array_equal(v, v2) and np.array_equal(i, i2) and period == 100.0


def test_sample_csv_bad_header(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(MeterError):
        fe.read_samples_csv(path)


def test_scenario_json_round_trip(tmp_path):
    sc = fe.load_scenario("type-b", "polynomial-truth")
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(sc.to_dict()))
    assert fe.load_scenario(path) == sc


def test_unknown_scenario():
    with pytest.raises(MeterError):
        fe.load_scenario("no-such-scenario")


def test_sample_csv_empty(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("index,v_counts,i_counts,sample_period_us\n")
    with pytest.raises(MeterError, match="no samples"):
        fe.read_samples_csv(path)
