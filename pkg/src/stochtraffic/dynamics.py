"""Kinematic bicycle model and two-point visual steering control."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .scenario import VehicleState


@dataclass(frozen=True)
class BicycleParams:
    l_f: float = 2.25
    l_r: float = 2.25
    max_steer: float = 0.6

    def __post_init__(self):
        if self.l_f <= 0 or self.l_r <= 0:
            raise ValueError("axle distances must be positive")


@dataclass(frozen=True)
class ControlInput:
    accel: float = 0.0
    steer: float = 0.0


@dataclass(frozen=True)
class TwoPointParams:
    near_distance: float = 8.0
    far_distance: float = 40.0
    k_near: float = 0.4
    k_far: float = 0.6
    k_heading: float = 0.05
    max_steer: float = 0.6

    def __post_init__(self):
        if not 0 < self.near_distance < self.far_distance:
            raise ValueError("need 0 < near_distance < far_distance")
        if min(self.k_near, self.k_far, self.k_heading) < 0:
            raise ValueError("gains must be non-negative")


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def slip_angle(steer: float, params: BicycleParams) -> float:
    return math.atan(params.l_r / (params.l_f + params.l_r) * math.tan(steer))


def bicycle_step(state: VehicleState, control: ControlInput, params: BicycleParams, dt: float) -> VehicleState:
    """One explicit-Euler step of the kinematic bicycle model about the CG."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    steer = _clamp(control.steer, -params.max_steer, params.max_steer)
    beta = slip_angle(steer, params)
    v, psi = state.speed, state.heading
    return replace(
        state,
        x=state.x + v * math.cos(psi + beta) * dt,
        y=state.y + v * math.sin(psi + beta) * dt,
        heading=psi + v / params.l_r * math.sin(beta) * dt,
        speed=max(0.0, v + control.accel * dt),
        accel=control.accel,
    )


def turning_radius(steer: float, params: BicycleParams) -> float:
    """Radius of the circle traced by the CG under constant steering."""
    return params.l_r / math.sin(slip_angle(steer, params))


def two_point_steering(
    state: VehicleState,
    target_lane_center: float,
    params: TwoPointParams,
    integral: float = 0.0,
) -> float:
    """Steering angle from the near- and far-point bearings to a target centerline.

    Both points sit on the target centerline at their look-ahead distances;
    their bearings are measured from the vehicle heading (positive = left).
    ``integral`` is the accumulated near-point angle (rad*s).
    """
    offset = target_lane_center - state.y
    theta_near = math.atan2(offset, params.near_distance) - state.heading
    theta_far = math.atan2(offset, params.far_distance) - state.heading
    delta = params.k_far * theta_far + params.k_near * theta_near + params.k_heading * integral
    return _clamp(delta, -params.max_steer, params.max_steer)


def near_angle(state: VehicleState, target_lane_center: float, params: TwoPointParams) -> float:
    return math.atan2(target_lane_center - state.y, params.near_distance) - state.heading


class TwoPointController:
    """Stateful wrapper that accumulates the near-point integral term.

    The integral resets whenever the target centerline switches lanes.
    """

    def __init__(self, params: TwoPointParams | None = None, integral_limit: float = 2.0):
        self.params = params or TwoPointParams()
        self.integral = 0.0
        self.integral_limit = integral_limit
        self._target_lane: int | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self._target_lane = None

    def __call__(self, state: VehicleState, target_y: float, dt: float, target_lane: int | None = None) -> float:
        if target_lane is not None and target_lane != self._target_lane:
            self.integral = 0.0
            self._target_lane = target_lane
        steer = two_point_steering(state, target_y, self.params, self.integral)
        self.integral = _clamp(
            self.integral + near_angle(state, target_y, self.params) * dt, -self.integral_limit, self.integral_limit
        )
        return steer
