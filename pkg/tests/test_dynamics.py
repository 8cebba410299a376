import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochtraffic.dynamics import (
    BicycleParams,
    ControlInput,
    TwoPointController,
    TwoPointParams,
    bicycle_step,
    slip_angle,
    turning_radius,
    two_point_steering,
)
from stochtraffic.scenario import VehicleState

P = BicycleParams()


def _car(x=0.0, y=0.0, heading=0.0, speed=10.0):
    return VehicleState(0, x, y, heading, speed, 0.0, 0)


def test_straight_step():
    s = bicycle_step(_car(), ControlInput(0.0, 0.0), P, 0.1)
    assert s.x == pytest.approx(1.0) and s.y == 0.0 and s.heading == 0.0


def test_pure_acceleration():
    s = bicycle_step(_car(), ControlInput(1.0, 0.0), P, 0.1)
    assert s.speed == pytest.approx(10.1)
    assert s.accel == 1.0


def test_bad_dt():
    with pytest.raises(ValueError):
        bicycle_step(_car(), ControlInput(), P, 0.0)


def test_steer_clamped():
    a = bicycle_step(_car(), ControlInput(0.0, 5.0), P, 0.1)
    b = bicycle_step(_car(), ControlInput(0.0, P.max_steer), P, 0.1)
    assert a == b


def _kasa_radius(xy: np.ndarray) -> float:
    """Algebraic least-squares circle fit."""
    x, y = xy[:, 0], xy[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x**2 + y**2
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = c[0] / 2, c[1] / 2
    return math.sqrt(c[2] + cx**2 + cy**2)


def test_constant_steer_circle():
    steer, dt = 0.05, 0.001
    radius = P.l_r / math.sin(math.atan(0.5 * math.tan(steer)))
    assert turning_radius(steer, P) == pytest.approx(radius)
    s = _car(speed=10.0)
    pts = [(s.x, s.y)]
    while s.heading < 2 * math.pi:
        s = bicycle_step(s, ControlInput(0.0, steer), P, dt)
        pts.append((s.x, s.y))
    xy = np.array(pts)
    assert abs(_kasa_radius(xy) - radius) / radius < 0.01
    # closed loop: back at the start after one revolution
    assert math.hypot(*xy[-1]) < 0.01 * radius


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 40), st.floats(-30, 30), st.floats(-1, 1), st.floats(-math.pi, math.pi))
def test_speed_never_negative(v, a, steer, heading):
    s = bicycle_step(_car(speed=v, heading=heading), ControlInput(a, steer), P, 0.1)
    assert s.speed >= 0.0


def test_straight_line_invariance():
    s = _car(y=3.0, heading=0.0)
    for _ in range(500):
        s = bicycle_step(s, ControlInput(0.3, 0.0), P, 0.1)
    assert s.y == 3.0 and s.heading == 0.0


def test_slip_angle_zero():
    assert slip_angle(0.0, P) == 0.0


TP = TwoPointParams()


def test_two_point_centred_is_zero():
    assert two_point_steering(_car(y=6.0), 6.0, TP) == 0.0


def test_two_point_steers_left_when_right_of_target():
    assert two_point_steering(_car(y=5.0), 6.0, TP) > 0


def test_two_point_corrects_heading():
    assert two_point_steering(_car(y=6.0, heading=0.1), 6.0, TP) < 0


def test_two_point_params_validation():
    with pytest.raises(ValueError):
        TwoPointParams(near_distance=50.0, far_distance=40.0)
    with pytest.raises(ValueError):
        TwoPointParams(k_far=-1.0)


def _closed_loop(offset, speed=20.0, seconds=60.0, dt=0.1):
    ctrl = TwoPointController(TP)
    s = _car(y=offset, speed=speed)
    errs = []
    for _ in range(int(round(seconds / dt))):
        steer = ctrl(s, 0.0, dt, target_lane=0)
        s = bicycle_step(s, ControlInput(0.0, steer), P, dt)
        errs.append(abs(s.y))
    return np.array(errs)


def test_two_point_closed_loop_converges():
    errs = _closed_loop(2.0)
    first = int(np.argmax(errs < 0.1))
    assert errs[first] < 0.1 and (first + 1) * 0.1 <= 10.0
    assert np.all(errs[first:] < 0.1)  # no divergence afterwards
    assert errs.max() <= 2.0 + 1e-9


@pytest.mark.parametrize("speed", [5.0, 15.0, 30.0])
def test_two_point_bounded_other_speeds(speed):
    errs = _closed_loop(2.0, speed=speed, seconds=120.0)
    assert errs[-1] < 0.1 and errs.max() <= 2.5


def test_integral_resets_on_lane_switch():
    ctrl = TwoPointController(TP)
    s = _car(y=1.0)
    for _ in range(20):
        ctrl(s, 2.0, 0.1, target_lane=0)
    assert ctrl.integral != 0.0
    ctrl(s, 6.0, 0.1, target_lane=1)
    # reset happened before the update, so only one step has accumulated
    assert ctrl.integral == pytest.approx(math.atan2(5.0, TP.near_distance) * 0.1)
