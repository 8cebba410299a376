"""Empirical lane-change layer for generative traffic.

Lane changes are injected on top of generated trajectories: a linear-hazard
trigger decides when a vehicle starts a change, a clipped Gaussian decides
how long it lasts, and a quintic ease shapes the lateral motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

KEEPING = "keeping"
CHANGING = "changing"


@dataclass(frozen=True)
class LaneChangeStats:
    sr_lc: float  # lane changes per vehicle per km
    t_m: float  # mean interval, in decision steps

    def __post_init__(self):
        if self.sr_lc < 0 or self.t_m <= 0:
            raise ValueError("need sr_lc >= 0 and t_m > 0")

    @classmethod
    def from_rate(cls, sr_lc: float, speed: float, dt: float) -> "LaneChangeStats":
        """Convert a per-km rate into a step horizon at a cruising ``speed``.

        One change per ``1000 / sr_lc`` metres, covered at ``speed * dt``
        metres per step.
        """
        if sr_lc <= 0 or speed <= 0:
            return cls(sr_lc=max(sr_lc, 0.0), t_m=math.inf)
        return cls(sr_lc=sr_lc, t_m=1000.0 / (sr_lc * speed * dt))


@dataclass(frozen=True)
class DurationModel:
    mean: float = 5.0
    std: float = 1.5
    clip: tuple[float, float] = (1.5, 10.0)

    def __post_init__(self):
        lo, hi = self.clip
        if self.mean <= 0 or self.std < 0 or not lo <= self.mean <= hi:
            raise ValueError("need mean > 0, std >= 0 and clip range containing the mean")


@dataclass(frozen=True)
class ManeuverState:
    phase: str = KEEPING
    t: int = 0
    origin_lane: int = 0
    target_lane: int = 0
    progress: float = 0.0
    duration: float = 0.0


def mean_lane_change_rate(n: int, q: int, L: float) -> float:
    """Observed lane changes per vehicle per kilometre."""
    if q <= 0 or L <= 0:
        raise ValueError("q and L must be positive")
    return n / q * 1000.0 / L


def lane_change_probability(t: float, t_m: float) -> float:
    if t < 0 or t_m <= 0:
        raise ValueError("need t >= 0 and t_m > 0")
    return min(t / t_m, 1.0)


def sample_lane_change_duration(model: DurationModel, rng: np.random.Generator) -> float:
    if model.std == 0:
        return model.mean
    lo, hi = model.clip
    return float(min(max(rng.normal(model.mean, model.std), lo), hi))


def lateral_profile(progress: float) -> float:
    p = progress
    return p * p * p * (10 + p * (-15 + 6 * p))


def neighbor_lanes(lane: int, lane_count: int) -> list[int]:
    return [n for n in (lane + 1, lane - 1) if 0 <= n < lane_count]


def overlay_lane_changes(
    m: ManeuverState,
    lane: int,
    stats: LaneChangeStats,
    durations: DurationModel,
    rng: np.random.Generator,
    dt: float,
    lane_count: int,
    lane_width: float,
) -> tuple[ManeuverState, Optional[float]]:
    """Advance one vehicle's maneuver machine by one decision step.

    Returns the updated state and the lateral target (``None`` while keeping
    the lane, in which case the trajectory generator owns the lateral motion).
    Exactly one uniform draw is consumed per keeping step with a legal target,
    which keeps seeded schedules reproducible.
    """
    if m.phase == KEEPING:
        options = neighbor_lanes(lane, lane_count)
        if not options:
            return replace(m, t=m.t + 1), None
        p = 0.0 if math.isinf(stats.t_m) else lane_change_probability(m.t, stats.t_m)
        if rng.random() >= p:
            return replace(m, t=m.t + 1), None
        target = options[int(rng.integers(len(options)))]
        duration = sample_lane_change_duration(durations, rng)
        m = ManeuverState(CHANGING, m.t, lane, target, 0.0, duration)
        return m, (lane + 0.5) * lane_width

    progress = min(1.0, m.progress + dt / m.duration)
    origin = (m.origin_lane + 0.5) * lane_width
    target_y = origin + lateral_profile(progress) * (m.target_lane - m.origin_lane) * lane_width
    if progress >= 1.0:
        return ManeuverState(KEEPING, 0, m.target_lane, m.target_lane, 0.0, 0.0), target_y
    return replace(m, progress=progress), target_y
