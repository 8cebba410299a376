"""Background traffic engine shared by the RL environment, the CLI and the
synthetic dataset generator.

Two traffic modes drive the non-ego vehicles:

* ``idm``: IDM car following plus MOBIL lane changes, executed by two-point
  steering along a quintic lateral reference.
* ``gan``: a trained trajectory generator proposes every vehicle's next
  position; the empirical lane-change overlay injects lateral maneuvers.

The ego vehicle always follows its lane leader with IDM and changes lanes
only when asked to.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .drivers import LEFT, RIGHT, STAY, IdmParams, LaneContext, MobilContext, MobilParams, Neighbor, idm_acceleration, mobil_decide
from .dynamics import BicycleParams, ControlInput, TwoPointController, TwoPointParams
from .lanechange import DurationModel, LaneChangeStats, ManeuverState, lateral_profile, overlay_lane_changes
from .scenario import GENERATIVE, CrashEvent, Scenario, ScenarioConfig, detect_collisions, init_scenario, step_world
from .trajectories import TrajectoryRecord

IDM_MODE = "idm"
GAN_MODE = "gan"
MODES = (IDM_MODE, GAN_MODE)


@dataclass(frozen=True)
class TrafficParams:
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    bicycle: BicycleParams = field(default_factory=BicycleParams)
    steering: TwoPointParams = field(default_factory=TwoPointParams)
    durations: DurationModel = field(default_factory=DurationModel)
    sr_lc: float = 0.1
    decision_ticks: int = 10
    lane_change_duration: float = 4.0
    gan_accel_bounds: tuple[float, float] = (-20.0, 5.0)
    gan_lane_margin: float = 0.25


@dataclass
class LaneChange:
    origin_lane: int
    target_lane: int
    duration: float
    progress: float = 0.0


class TrafficSim:
    """Owns a Scenario and advances it tick by tick."""

    def __init__(
        self,
        scenario: Scenario,
        mode: str = IDM_MODE,
        params: TrafficParams = TrafficParams(),
        generator=None,
        noise_seed: int = 0,
        soft_gap: float = 2.0,
        soft_ttc: float = 1.0,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown traffic mode {mode!r}")
        if mode == GAN_MODE and generator is None:
            raise ValueError("gan traffic needs a trained generator")
        self.s = scenario
        self.mode = mode
        self.p = params
        self.gen = generator
        self.soft_gap, self.soft_ttc = soft_gap, soft_ttc
        n = len(scenario.vehicles)
        self.steer = [TwoPointController(params.steering) for _ in range(n)]
        self.changes: list[Optional[LaneChange]] = [None] * n
        self.overlay = [ManeuverState(origin_lane=v.lane_index, target_lane=v.lane_index) for v in scenario.vehicles]
        self.ticks = 0
        self.noise = torch.Generator().manual_seed(noise_seed)
        self.history: Optional[deque] = None
        if mode == GAN_MODE:
            o_l, dt = generator.cfg.o_l, scenario.dt
            self.history = deque(maxlen=o_l)
            # constant-velocity back-extrapolation stands in for unseen history
            for k in range(o_l - 1, -1, -1):
                self.history.append([(v.x - v.speed * math.cos(v.heading) * dt * k,
                                      v.y - v.speed * math.sin(v.heading) * dt * k) for v in scenario.vehicles])

    @classmethod
    def create(cls, config: ScenarioConfig, seed: int, mode: str = IDM_MODE, params: TrafficParams = TrafficParams(),
               generator=None, **kw) -> "TrafficSim":
        driver = GENERATIVE if mode == GAN_MODE else "rule_based"
        return cls(init_scenario(config, seed, driver), mode, params, generator, noise_seed=seed, **kw)

    # neighbour queries -------------------------------------------------

    def _lane_members(self) -> dict[int, list[int]]:
        lanes: dict[int, list[int]] = {}
        for i, v in enumerate(self.s.vehicles):
            lanes.setdefault(v.lane_index, []).append(i)
        return lanes

    def _neighbors(self, i: int, lane: int, lanes: dict[int, list[int]]):
        """Closest leader and follower of vehicle ``i`` in ``lane`` as (index, gap)."""
        vs = self.s.vehicles
        me = vs[i]
        lead = follow = None
        lead_x, follow_x = math.inf, -math.inf
        for j in lanes.get(lane, ()):
            if j == i:
                continue
            x = vs[j].x
            if x >= me.x:
                if x < lead_x:
                    lead, lead_x = j, x
            elif x > follow_x:
                follow, follow_x = j, x
        out = []
        for j in (lead, follow):
            if j is None:
                out.append(None)
            else:
                gap = abs(vs[j].x - me.x) - (vs[j].length + me.length) / 2
                out.append((j, gap))
        return out[0], out[1]

    def _idm_to(self, i: int, leader) -> float:
        v = self.s.vehicles[i]
        idm = self.p.idm
        if leader is None:
            return idm_acceleration(v.speed, v.desired_speed, idm.d_max_gap, 0.0, idm)
        j, gap = leader
        return idm_acceleration(v.speed, v.desired_speed, max(gap, 1e-2), v.speed - self.s.vehicles[j].speed, idm)

    def longitudinal(self, i: int, lanes: dict[int, list[int]]) -> float:
        v = self.s.vehicles[i]
        a = self._idm_to(i, self._neighbors(i, v.lane_index, lanes)[0])
        ch = self.changes[i]
        if ch is not None:
            for lane in (ch.origin_lane, ch.target_lane):
                if lane != v.lane_index:
                    a = min(a, self._idm_to(i, self._neighbors(i, lane, lanes)[0]))
        return a

    def mobil_context(self, i: int, lanes: Optional[dict[int, list[int]]] = None) -> MobilContext:
        lanes = lanes if lanes is not None else self._lane_members()
        vs = self.s.vehicles
        me = vs[i]

        def lane_ctx(lane: int, floor: Optional[float] = None) -> LaneContext:
            lead, follow = self._neighbors(i, lane, lanes)
            # overlaps in the own lane are crashes already logged; keep IDM defined
            fix = (lambda g: max(g, floor)) if floor is not None else (lambda g: g)
            leader = Neighbor(fix(lead[1]), vs[lead[0]].speed, vs[lead[0]].desired_speed) if lead else None
            follower = Neighbor(fix(follow[1]), vs[follow[0]].speed, vs[follow[0]].desired_speed) if follow else None
            return LaneContext(leader, follower)

        n = self.s.road.lane_count
        return MobilContext(
            speed=me.speed,
            v_des=me.desired_speed,
            current=lane_ctx(me.lane_index, floor=1e-2),
            left=lane_ctx(me.lane_index + 1) if me.lane_index + 1 < n else None,
            right=lane_ctx(me.lane_index - 1) if me.lane_index - 1 >= 0 else None,
            length=me.length,
        )

    def mobil_direction(self, i: int) -> str:
        return mobil_decide(self.mobil_context(i), self.p.idm, self.p.mobil)

    # lane changes ------------------------------------------------------

    def is_changing(self, i: int) -> bool:
        return self.changes[i] is not None

    def start_lane_change(self, i: int, direction: str, duration: Optional[float] = None) -> bool:
        """Begin a lane change; returns False if busy or the target lane does not exist."""
        if self.changes[i] is not None or direction == STAY:
            return False
        v = self.s.vehicles[i]
        target = v.lane_index + (1 if direction == LEFT else -1)
        if not 0 <= target < self.s.road.lane_count:
            return False
        self.changes[i] = LaneChange(v.lane_index, target, duration or self.p.lane_change_duration)
        return True

    def _lateral_reference(self, i: int) -> tuple[float, int]:
        road = self.s.road
        ch = self.changes[i]
        if ch is None:
            lane = self.s.vehicles[i].lane_index
            return road.lane_center(lane), lane
        ch.progress = min(1.0, ch.progress + self.s.dt / ch.duration)
        y0, y1 = road.lane_center(ch.origin_lane), road.lane_center(ch.target_lane)
        y = y0 + lateral_profile(ch.progress) * (y1 - y0)
        lane = ch.target_lane
        if ch.progress >= 1.0:
            self.changes[i] = None
        return y, lane

    # stepping ----------------------------------------------------------

    def _rule_control(self, i: int, lanes) -> ControlInput:
        a = self.longitudinal(i, lanes)
        y_ref, lane = self._lateral_reference(i)
        steer = self.steer[i](self.s.vehicles[i], y_ref, self.s.dt, lane)
        return ControlInput(a, steer)

    def _gan_controls(self, lanes) -> dict[int, ControlInput]:
        vs = self.s.vehicles
        hist = np.array(self.history, dtype=np.float64).transpose(1, 0, 2)  # (vehicles, frames, 2)
        z = self.gen.sample_z(len(vs), self.noise)
        with torch.no_grad():
            obs = torch.from_numpy(np.ascontiguousarray(hist))
            nxt = self.gen(obs, z, None, steps=1)[:, 0].numpy()
        road, dt, bp = self.s.road, self.s.dt, self.p.bicycle
        lo, hi = self.p.gan_accel_bounds
        controls = {}
        stats_cache: dict[float, LaneChangeStats] = {}
        for i, v in enumerate(vs):
            if v.is_ego:
                continue
            if v.desired_speed not in stats_cache:
                stats_cache[v.desired_speed] = LaneChangeStats.from_rate(self.p.sr_lc, v.desired_speed, dt)
            self.overlay[i], y_target = overlay_lane_changes(
                self.overlay[i], v.lane_index, stats_cache[v.desired_speed], self.p.durations,
                self.s.rng, dt, road.lane_count, road.lane_width,
            )
            dx, dy = float(nxt[i, 0] - v.x), float(nxt[i, 1] - v.y)
            if y_target is not None:
                steer = self.steer[i](v, y_target, dt, self.overlay[i].target_lane)
                v_next = dx / dt
            else:
                # lane changes come only from the overlay, so the free proposal stays inside
                # its lane with a small body margin; this stops slow lateral drift from
                # walking vehicles across the lane boundary
                centre = road.lane_center(v.lane_index)
                band = max(0.0, 0.5 * (road.lane_width - v.width) - self.p.gan_lane_margin)
                y_goal = min(max(v.y + dy, centre - band), centre + band)
                dy = y_goal - v.y
                heading = math.atan2(dy, dx) if dx > 1e-6 else 0.0
                beta = max(-1.2, min(1.2, heading - v.heading))
                steer = math.atan(math.tan(beta) * (bp.l_f + bp.l_r) / bp.l_r)
                v_next = math.hypot(dx, dy) / dt
            accel = min(max((v_next - v.speed) / dt, lo), hi)
            controls[i] = ControlInput(accel, steer)
        return controls

    def tick(self) -> list[CrashEvent]:
        """Advance one physics step; returns the crash events of the new state."""
        lanes = self._lane_members()
        vs = self.s.vehicles
        if self.mode == IDM_MODE and self.ticks % self.p.decision_ticks == 0:
            for i, v in enumerate(vs):
                if not v.is_ego and self.changes[i] is None:
                    direction = mobil_decide(self.mobil_context(i, lanes), self.p.idm, self.p.mobil)
                    if direction != STAY:
                        self.start_lane_change(i, direction)
        gan = self._gan_controls(lanes) if self.mode == GAN_MODE else {}
        controls = []
        for i, v in enumerate(vs):
            controls.append(gan[i] if i in gan else self._rule_control(i, lanes))
        self.s = step_world(self.s, controls, self.p.bicycle)
        if self.history is not None:
            self.history.append([(v.x, v.y) for v in self.s.vehicles])
        self.ticks += 1
        return detect_collisions(self.s, self.soft_gap, self.soft_ttc)


def simulate_frames(config: ScenarioConfig, seed: int, steps: int, mode: str = IDM_MODE,
                    params: TrafficParams = TrafficParams(), generator=None, ego_mobil: bool = True):
    """Yield the scenario after each of ``steps`` ticks; the ego drives by MOBIL."""
    sim = TrafficSim.create(config, seed, mode, params, generator)
    ego = sim.s.ego_index
    for k in range(steps):
        if ego_mobil and k % params.decision_ticks == 0 and not sim.is_changing(ego):
            d = sim.mobil_direction(ego)
            if d != STAY:
                sim.start_lane_change(ego, d)
        sim.tick()
        yield sim.s


def synthesize_records(config: ScenarioConfig, seeds, steps: int, params: TrafficParams = TrafficParams()):
    """Rule-driver trajectories as native records, one run per seed.

    Runs are placed on disjoint time spans and vehicle-id ranges so they never
    share a scene.
    """

    records = []
    for run, seed in enumerate(seeds):
        id_base = run * 1000
        t_base = run * (steps + 100)
        frames = [init_scenario(config, seed)] + list(simulate_frames(config, seed, steps, IDM_MODE, params))
        for k, frame in enumerate(frames):
            t = round((t_base + k) * config.sim_dt, 10)
            for v in frame.vehicles:
                records.append(TrajectoryRecord(id_base + v.id, t, v.x, v.y))
    records.sort(key=lambda r: (r.vehicle_id, r.t))
    return records
