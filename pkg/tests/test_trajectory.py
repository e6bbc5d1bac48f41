import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleopsim import trajectory as tr

finite = st.floats(-1.0, 1.0, allow_nan=False)


def test_midpoint_and_endpoint_values():
    seg = tr.MinJerkSegment(0.0, 1.0, 1.0)
    pos, vel = tr.min_jerk_eval(seg, 0.5)
    assert pos == pytest.approx(0.5, abs=1e-12)
    assert vel == pytest.approx(1.875, abs=1e-12)
    assert tr.min_jerk_eval(seg, 0.0) == (0.0, 0.0)
    assert tr.min_jerk_eval(seg, 1.0) == (1.0, 0.0)


def test_outside_segment_is_clamped():
    seg = tr.MinJerkSegment(0.2, -0.3, 2.0, t_start=1.0)
    assert tr.min_jerk_eval(seg, 0.0) == (0.2, 0.0)
    assert tr.min_jerk_eval(seg, 5.0) == (-0.3, 0.0)


@given(finite, finite, st.floats(0.05, 5.0), st.floats(0.0, 10.0))
def test_midpoint_property(x0, xf, T, t0):
    seg = tr.MinJerkSegment(x0, xf, T, t0)
    pos, vel = tr.min_jerk_eval(seg, t0 + T / 2)
    assert abs(pos - (x0 + xf) / 2) < 1e-9
    assert abs(vel - 1.875 * (xf - x0) / T) < 1e-9 * max(1.0, abs(xf - x0) / T)


def test_velocity_matches_numerical_derivative():
    seg = tr.MinJerkSegment(-0.01, 0.02, 1.3, 0.4)
    h = 1e-6
    for t in np.linspace(0.45, 1.65, 13):
        num = (tr.min_jerk_eval(seg, t + h)[0] - tr.min_jerk_eval(seg, t - h)[0]) / (2 * h)
        assert tr.min_jerk_eval(seg, t)[1] == pytest.approx(num, abs=1e-7)


def test_invalid_segment():
    with pytest.raises(ValueError):
        tr.MinJerkSegment(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        tr.MinJerkSegment(math.nan, 1.0, 1.0)


def test_open_loop_protocols():
    p = tr.build_open_loop("palpation")
    assert min(s.xf for s in p.segments) == pytest.approx(-0.010)
    assert p.cycle_period == 5.0
    assert p.duration == pytest.approx(15.0)
    r = tr.build_open_loop("retraction")
    assert max(s.xf for s in r.segments) == pytest.approx(0.015)
    assert p.frame == r.frame == "psm"
    with pytest.raises(ValueError):
        tr.build_open_loop("pinch")


@pytest.mark.parametrize("axis", tr.AXES)
def test_closed_loop_protocol(axis):
    p = tr.build_closed_loop(axis)
    moves = [s for s in p.segments if not s.is_hold]
    assert [round(s.xf - s.x0, 12) for s in moves] == [0.075, -0.15, 0.15, -0.15, 0.075]
    assert [s.T for s in moves] == [1.0, 2.0, 2.0, 2.0, 1.0]
    assert sum(s.xf - s.x0 for s in moves) == pytest.approx(0.0, abs=1e-15)
    holds = p.commanded_holds()
    assert len(holds) == 4  # lead-in and tail are not interior
    assert sum(s.T for s in moves) == 8.0
    assert p.pretension == (1.0 if axis in "xy" else 0.0)
    # scaled follower peak
    assert 0.2 * max(abs(s.xf) for s in moves) == pytest.approx(0.015)


def test_closed_loop_holds_are_two_seconds():
    p = tr.build_closed_loop("z")
    long_holds = [(a, b) for a, b in p.commanded_holds() if b - a > 1.5]
    assert len(long_holds) == 4
    assert all(b - a == pytest.approx(2.0) for a, b in long_holds)


def test_sample_states():
    p = tr.build_closed_loop("z")
    s = tr.sample(p, 0.5 + 0.5)  # midpoint of the first +75 mm move
    assert s.x_des == pytest.approx(0.0375, abs=1e-12)
    assert s.moving
    h = tr.sample(p, 2.5)
    assert h.xd_des == 0.0 and not h.moving
    end = tr.sample(p, p.duration + 3.0)
    assert end.x_des == p.segments[-1].xf and not end.moving
    with pytest.raises(ValueError):
        tr.sample(p, -0.1)


@pytest.mark.parametrize("builder", [lambda: tr.build_closed_loop("x"),
                                     lambda: tr.build_open_loop("retraction"),
                                     tr.build_demo_protocol, tr.build_brief_protocol])
def test_continuity_and_velocity_integral(builder):
    p = builder()
    for a, b in zip(p.segments, p.segments[1:]):
        assert a.xf == b.x0
        assert abs(tr.min_jerk_eval(a, a.t_end)[1]) < 1e-9
        assert tr.min_jerk_eval(b, b.t_start)[1] == 0.0
    rate = 500.0
    t = np.arange(int(round(p.duration * rate)) + 1) / rate
    x, v, _ = tr.sample_array(p, t)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) / rate)])
    assert np.max(np.abs(p.start_position + integral - x)) < 1e-6


def test_demo_protocol_length():
    assert tr.build_demo_protocol().duration == pytest.approx(35.0)
    with pytest.raises(ValueError):
        tr.build_demo_protocol(10.0)


def test_export_csv(tmp_path):
    p = tr.build_open_loop("palpation", cycles=1)
    path = tr.export_csv(p, tmp_path / "p.csv", rate=100.0)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x_des,xd_des,moving"
    assert len(lines) == 1 + 501


def test_discontiguous_protocol_rejected():
    a = tr.MinJerkSegment(0.0, 1.0, 1.0, 0.0)
    b = tr.MinJerkSegment(0.5, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        tr.TrajectoryProtocol((a, b), kind="custom")
