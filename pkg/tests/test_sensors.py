import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stridemap.sensors import (MotionState, ScalarChannel, SensorConfig,
                               SensorTrace, TraceError, VectorChannel,
                               WifiScan, accel_magnitude, classify_motion,
                               detect_steps, dump_trace, infer_rate,
                               load_trace)

from conftest import DT, GRAVITY, RATE, accel_channel, flat, trace_from_mags, walking


# ---------------------------------------------------------------------------
# magnitude


def test_magnitude_single_axis():
    assert accel_magnitude(0, 0, 9.81) == 9.81


def test_magnitude_345():
    assert accel_magnitude(3, 4, 0) == 5


def test_magnitude_zero():
    assert accel_magnitude(0, 0, 0) == 0


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100))
def test_magnitude_matches_hypot(ax, ay, az):
    assert math.isclose(accel_magnitude(ax, ay, az),
                        math.sqrt(ax * ax + ay * ay + az * az))


# ---------------------------------------------------------------------------
# trace io


def test_load_three_accel_lines(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text(
        '{"ch": "accel", "t": 0.0, "v": [0, 0, 9.8]}\n'
        '{"ch": "accel", "t": 0.02, "v": [0, 0, 9.9]}\n'
        '{"ch": "accel", "t": 0.04, "v": [0, 0, 9.7]}\n')
    trace = load_trace(p)
    assert len(trace.accel) == 3
    assert trace.accel.v[1, 2] == 9.9


def test_load_regressing_baro_names_channel(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text(
        '{"ch": "baro", "t": 1.0, "v": 1013.0}\n'
        '{"ch": "baro", "t": 0.5, "v": 1013.1}\n')
    with pytest.raises(TraceError, match="baro"):
        load_trace(p)


def test_load_empty_file(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text("")
    trace = load_trace(p)
    assert len(trace.accel) == 0
    assert trace.truth is None


def test_load_rejects_positive_rss(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"ch": "wifi", "t": 0.0, "v": [["aa", 5]]}\n')
    with pytest.raises(TraceError):
        load_trace(p)


def test_load_rejects_duplicate_mac(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"ch": "wifi", "t": 0.0, "v": [["aa", -50], ["aa", -51]]}\n')
    with pytest.raises(TraceError, match="duplicate"):
        load_trace(p)


def test_dump_load_round_trip(tmp_path):
    n = 20
    t = np.arange(n) * DT
    trace = SensorTrace(
        accel=VectorChannel(t, np.random.default_rng(0).normal(size=(n, 3))),
        gyro=VectorChannel(t, np.zeros((n, 3))),
        baro=ScalarChannel(t[:5], 1013.0 + np.arange(5) * 0.01),
        wifi=[WifiScan(t=0.1, readings={"aa:bb": -60, "cc:dd": -72})],
    )
    path = tmp_path / "round.jsonl"
    dump_trace(trace, path)
    back = load_trace(path)
    np.testing.assert_allclose(back.accel.v, trace.accel.v)
    np.testing.assert_allclose(back.baro.v, trace.baro.v)
    assert back.wifi[0].readings == trace.wifi[0].readings


def test_infer_rate():
    t = np.arange(100) * 0.02
    assert infer_rate(t) == pytest.approx(50.0)


def test_infer_rate_too_short():
    with pytest.raises(TraceError):
        infer_rate(np.array([1.0]))


# ---------------------------------------------------------------------------
# motion classification


def test_constant_magnitude_all_still():
    trace = trace_from_mags(np.full(200, GRAVITY))
    labels = classify_motion(trace)
    assert len(labels) == 4
    assert all(state is MotionState.STILL for _, state in labels)


def test_sinusoid_all_walking():
    # amplitude 2 sinusoid has window variance 2 (>> 0.5 threshold)
    trace = trace_from_mags(walking(4.0, period=0.5, amplitude=2.0))
    labels = classify_motion(trace)
    assert len(labels) == 4
    assert all(state is MotionState.WALKING for _, state in labels)


def test_still_walk_still_boundaries():
    mags = np.concatenate([flat(3.0), walking(4.0), flat(3.0)])
    labels = classify_motion(trace_from_mags(mags))
    states = [s for _, s in labels]
    assert states == [MotionState.STILL] * 3 + [MotionState.WALKING] * 4 \
        + [MotionState.STILL] * 3
    assert labels[3][0] == pytest.approx(3.0)


def test_label_stamped_at_window_start():
    trace = trace_from_mags(np.full(100, GRAVITY))
    labels = classify_motion(trace)
    assert [t for t, _ in labels] == pytest.approx([0.0, 1.0])


def test_partial_window_unlabelled():
    trace = trace_from_mags(np.full(149, GRAVITY))
    assert len(classify_motion(trace)) == 2


# ---------------------------------------------------------------------------
# step detection


def test_ten_cycle_sinusoid_ten_steps():
    mags = np.concatenate([flat(2.0), walking(5.0, period=0.5), flat(2.0)])
    steps = detect_steps(trace_from_mags(mags))
    assert len(steps) == 10
    gaps = [s.periodicity for s in steps[1:]]
    assert all(abs(g - 0.5) <= DT + 1e-12 for g in gaps)


def test_constant_signal_no_steps():
    assert detect_steps(trace_from_mags(np.full(300, GRAVITY))) == []


def test_low_amplitude_no_steps():
    # variance 0.05^2/2 is far below the walking threshold
    mags = walking(5.0, period=0.5, amplitude=0.05)
    assert detect_steps(trace_from_mags(mags)) == []


def test_first_step_has_no_periodicity():
    mags = np.concatenate([flat(2.0), walking(3.0), flat(2.0)])
    steps = detect_steps(trace_from_mags(mags))
    assert steps[0].periodicity is None
    assert all(s.periodicity is not None for s in steps[1:])


def test_steps_carry_positive_variance():
    mags = np.concatenate([flat(2.0), walking(3.0), flat(2.0)])
    for s in detect_steps(trace_from_mags(mags)):
        assert s.accel_variance > 0.5


# periods whose peaks never fall exactly midway between samples: a
# symmetric tie has no strict local maximum and only happens synthetically
@settings(max_examples=30)
@given(st.integers(2, 12), st.sampled_from([0.42, 0.5, 0.74, 0.9]))
def test_step_count_tracks_cycle_count(cycles, period):
    mags = np.concatenate([flat(2.0),
                           walking(cycles * period, period=period),
                           flat(2.0)])
    steps = detect_steps(trace_from_mags(mags))
    assert len(steps) == cycles


def test_dump_interleaves_by_time(tmp_path):
    n = 10
    t = np.arange(n) * DT
    trace = SensorTrace(
        accel=VectorChannel(t, np.zeros((n, 3))),
        baro=ScalarChannel(np.array([0.05]), np.array([1013.0])),
    )
    buf = io.StringIO()
    dump_trace(trace, buf)
    lines = buf.getvalue().splitlines()
    channels = [line.split('"')[3] for line in lines]
    assert channels[3] == "baro"  # lands between accel t=0.04 and t=0.06
