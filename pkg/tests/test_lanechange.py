import math
from fractions import Fraction

import numpy as np
import pytest

from stochtraffic.lanechange import (
    CHANGING,
    KEEPING,
    DurationModel,
    LaneChangeStats,
    ManeuverState,
    lane_change_probability,
    lateral_profile,
    mean_lane_change_rate,
    overlay_lane_changes,
    sample_lane_change_duration,
)


def test_rate_formula():
    assert mean_lane_change_rate(300, 1500, 2000) == 0.1
    assert mean_lane_change_rate(0, 10, 500) == 0.0
    assert mean_lane_change_rate(7, 7, 1000) == 1.0
    with pytest.raises(ValueError):
        mean_lane_change_rate(1, 0, 10)
    with pytest.raises(ValueError):
        mean_lane_change_rate(1, 1, 0)


def test_probability():
    assert lane_change_probability(0, 100) == 0.0
    assert lane_change_probability(100, 100) == 1.0
    assert lane_change_probability(50, 100) == 0.5
    assert lane_change_probability(500, 100) == 1.0


def test_stats_from_rate():
    s = LaneChangeStats.from_rate(0.1, 20.0, 0.1)
    assert s.t_m == pytest.approx(5000.0)
    assert math.isinf(LaneChangeStats.from_rate(0.0, 20.0, 0.1).t_m)


def test_duration_degenerate():
    rng = np.random.default_rng(0)
    m = DurationModel(4.0, 0.0, (1.0, 10.0))
    assert all(sample_lane_change_duration(m, rng) == 4.0 for _ in range(10))


def test_duration_mean_and_clip():
    rng = np.random.default_rng(0)
    m = DurationModel(5.0, 1.0, (1.0, 10.0))
    draws = np.array([sample_lane_change_duration(m, rng) for _ in range(100_000)])
    assert abs(draws.mean() - 5.0) < 0.02
    assert draws.min() >= 1.0 and draws.max() <= 10.0


def test_duration_model_validation():
    with pytest.raises(ValueError):
        DurationModel(12.0, 1.0, (1.0, 10.0))


def test_profile():
    assert lateral_profile(0.0) == 0.0 and lateral_profile(1.0) == 1.0
    assert lateral_profile(0.5) == pytest.approx(0.5)
    # exact rational arithmetic keeps the differences free of roundoff
    h = Fraction(1, 10**6)
    for p in (Fraction(0), Fraction(1)):
        d1 = (lateral_profile(p + h) - lateral_profile(p - h)) / (2 * h)
        d2 = (lateral_profile(p + h) - 2 * lateral_profile(p) + lateral_profile(p - h)) / h**2
        assert abs(d1) < 1e-9
        assert abs(d2) < 1e-9


def _run(stats, lane_count=3, steps=1000, seed=0, durations=DurationModel(), dt=0.1, lane=1):
    rng = np.random.default_rng(seed)
    m = ManeuverState(KEEPING, 0, lane, lane)
    out = []
    for _ in range(steps):
        m, y = overlay_lane_changes(m, lane, stats, durations, rng, dt, lane_count, 4.0)
        if m.phase == KEEPING:
            lane = m.target_lane
        out.append((m, y))
    return out


def test_single_lane_never_changes():
    trace = _run(LaneChangeStats(0.1, 5.0), lane_count=1, lane=0)
    assert all(m.phase == KEEPING and y is None for m, y in trace)


def _mean_keeping_steps(t_m: int) -> float:
    """Exact expected trigger step t under the linear hazard, by enumeration."""
    surv, mean = 1.0, 0.0
    for t in range(t_m + 1):
        p = min(t / t_m, 1.0)
        mean += t * surv * p
        surv *= 1 - p
    return mean


def test_mean_interval_monte_carlo():
    t_m, dt = 100, 0.1
    stats = LaneChangeStats(0.1, float(t_m))
    durations = DurationModel()
    starts, total = [], 0
    for vehicle in range(20):
        trace = _run(stats, steps=50_000, seed=vehicle, durations=durations, dt=dt)
        prev = KEEPING
        idx = [k for k, (m, _) in enumerate(trace) if m.phase == CHANGING and (k == 0 or trace[k - 1][0].phase == KEEPING)]
        starts.extend(np.diff(idx).tolist())
        total += len(trace)
    assert total == 1_000_000
    interval = float(np.mean(starts))
    assert 0.5 * t_m <= interval <= 1.5 * t_m
    # oracle: keeping steps (t runs 0..K, so K + 1 calls) plus the changing calls
    changing = np.mean([math.ceil(round(d / dt, 9)) for d in
                        (sample_lane_change_duration(durations, np.random.default_rng(s)) for s in range(20_000))])
    oracle = _mean_keeping_steps(t_m) + 1 + changing
    assert interval == pytest.approx(oracle, rel=0.03)


def test_changing_suppresses_draws():
    rng = np.random.default_rng(0)
    m = ManeuverState(CHANGING, 5, 1, 2, 0.2, 5.0)
    state = rng.bit_generator.state
    m2, y = overlay_lane_changes(m, 1, LaneChangeStats(0.1, 1.0), DurationModel(), rng, 0.1, 3, 4.0)
    assert rng.bit_generator.state == state
    assert m2.phase == CHANGING and m2.progress == pytest.approx(0.22)


def test_continuity_and_monotone_progress():
    durations = DurationModel()
    trace = _run(LaneChangeStats(0.1, 20.0), steps=20_000, durations=durations)
    dt, width = 0.1, 4.0
    bound = width * dt / durations.clip[0] * 1.875
    prev_y, prev_p = None, None
    completed = 0
    for m, y in trace:
        if y is not None and prev_y is not None:
            assert abs(y - prev_y) <= bound + 1e-12
        if m.phase == CHANGING and prev_p is not None and m.progress > 0:
            assert m.progress >= prev_p
        if m.phase == KEEPING and prev_p is not None and y is not None:
            completed += 1
            assert m.t == 0
            assert y == pytest.approx((m.target_lane + 0.5) * width)
        prev_y = y
        prev_p = m.progress if m.phase == CHANGING else None
    assert completed > 10


def test_overlay_reproducible():
    a = _run(LaneChangeStats(0.1, 30.0), steps=2000, seed=3)
    b = _run(LaneChangeStats(0.1, 30.0), steps=2000, seed=3)
    assert a == b
