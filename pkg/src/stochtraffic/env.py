"""Lane-change decision MDP over the highway simulation.

One decision step spans ``decision_period`` seconds of physics ticks. The
agent picks one of three actions; longitudinal control of the ego is always
IDM.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .drivers import LEFT, RIGHT, STAY
from .scenario import ConfigurationError, Scenario, ScenarioConfig
from .traffic import GAN_MODE, IDM_MODE, MODES, TrafficParams, TrafficSim

KEEP_LANE, CHANGE_LEFT, CHANGE_RIGHT = 0, 1, 2
ACTIONS = (KEEP_LANE, CHANGE_LEFT, CHANGE_RIGHT)
ACTION_NAMES = ("a1_keep", "a2_left", "a3_right")

EPISODE_LOG_HEADER = ("episode", "step", "action", "reward_total", "reward_speed", "crash", "ego_x", "ego_lane")


@dataclass(frozen=True)
class EnvConfig:
    decision_period: float = 1.0
    ds_max: float = 200.0
    v_max: float = 30.0
    step_limit: int = 500
    low_acc_threshold: float = 1.7
    speed_floor: float = 15.0
    lane_change_penalty: float = -1.0
    out_of_road_penalty: float = -100.0
    hard_crash_penalty: float = -100.0
    soft_crash_penalty: float = -10.0
    goal_reward: float = 100.0


@dataclass(frozen=True)
class RewardBreakdown:
    speed: float = 0.0
    low_acc: float = 0.0
    lane_change_penalty: float = 0.0
    out_of_road: float = 0.0
    hard_crash: float = 0.0
    soft_crash: float = 0.0
    goal: float = 0.0

    @property
    def total(self) -> float:
        return (self.speed + self.low_acc + self.lane_change_penalty + self.out_of_road
                + self.hard_crash + self.soft_crash + self.goal)


@dataclass(frozen=True)
class TransitionSummary:
    v_cur: float
    v_des: float
    max_abs_accel: float = 0.0
    lane_change_started: bool = False
    out_of_road: bool = False
    hard_crash: bool = False
    soft_crash: bool = False
    goal: bool = False


@dataclass
class StepResult:
    observation: np.ndarray
    reward: RewardBreakdown
    done: bool
    info: dict = field(default_factory=dict)


def speed_reward(v_cur: float, v_des: float, floor: float = 15.0) -> float:
    return (v_cur - floor) / (v_des - floor)


def compute_reward(t: TransitionSummary, cfg: EnvConfig = EnvConfig()) -> RewardBreakdown:
    """Reward of one decision step.

    An invalid lane change ends the episode with the out-of-road penalty
    alone. Otherwise the speed term is paid each step, except that a harsh
    acceleration above ``low_acc_threshold`` replaces it by its negation.
    """
    if t.out_of_road:
        return RewardBreakdown(out_of_road=cfg.out_of_road_penalty)
    s = speed_reward(t.v_cur, t.v_des, cfg.speed_floor)
    harsh = t.max_abs_accel > cfg.low_acc_threshold
    terminal = {}
    if t.hard_crash:
        terminal["hard_crash"] = cfg.hard_crash_penalty
    elif t.goal:
        terminal["goal"] = cfg.goal_reward
    return RewardBreakdown(
        speed=0.0 if harsh else s,
        low_acc=-s if harsh else 0.0,
        lane_change_penalty=cfg.lane_change_penalty if t.lane_change_started else 0.0,
        soft_crash=cfg.soft_crash_penalty if t.soft_crash and not t.hard_crash else 0.0,
        **terminal,
    )


def _clip(v: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return lo if v < lo else hi if v > hi else v


def encode_observation(s: Scenario, ds_max: float = 200.0, v_max: float = 30.0, v_des_ego: float = 25.0) -> np.ndarray:
    """Ego speed ratio, left/right lane flags, then (position, speed, lane code) per other vehicle by id."""
    ego = s.ego
    n = s.road.lane_count
    obs = [_clip(ego.speed / v_des_ego, 0.0, 1.0),
           1.0 if ego.lane_index + 1 < n else 0.0,
           1.0 if ego.lane_index > 0 else 0.0]
    for v in sorted(s.vehicles, key=lambda v: v.id):
        if v.is_ego:
            continue
        obs.append(_clip((v.x - ego.x) / ds_max))
        obs.append(_clip((v.speed - ego.speed) / v_max))
        obs.append(_clip(0.5 * (v.lane_index - ego.lane_index)))
    return np.array(obs, dtype=np.float64)


def observation_size(m: int) -> int:
    return 3 + 3 * (m - 1)


class HighwayEnv:
    """Gym-style environment: ``reset(seed) -> obs`` and ``step(action) -> StepResult``."""

    def __init__(
        self,
        mode: str = IDM_MODE,
        scenario: ScenarioConfig = ScenarioConfig(),
        traffic: TrafficParams = TrafficParams(),
        config: EnvConfig = EnvConfig(),
        generator=None,
    ):
        if mode not in MODES:
            raise ConfigurationError(f"unknown traffic mode {mode!r}")
        if mode == GAN_MODE and generator is None:
            raise ConfigurationError("traffic_gan mode requires trained generator weights")
        self.mode = mode
        self.scenario_cfg = scenario
        self.traffic = traffic
        self.cfg = config
        self.generator = generator
        self.ticks_per_step = max(1, round(config.decision_period / scenario.sim_dt))
        self.sim: Optional[TrafficSim] = None
        self.done = True
        self.steps = 0

    @property
    def observation_size(self) -> int:
        return observation_size(self.scenario_cfg.m)

    @property
    def scenario(self) -> Scenario:
        return self.sim.s

    def observe(self) -> np.ndarray:
        return encode_observation(self.sim.s, self.cfg.ds_max, self.cfg.v_max, self.scenario_cfg.v_des_ego)

    def reset(self, seed: int) -> np.ndarray:
        sc = self.scenario_cfg
        self.sim = TrafficSim.create(sc, seed, self.mode, self.traffic, self.generator,
                                     soft_gap=sc.soft_gap, soft_ttc=sc.soft_ttc)
        self.done = False
        self.steps = 0
        self.seed = seed
        return self.observe()

    def mobil_action(self) -> int:
        """Action the MOBIL baseline would take for the ego right now."""
        ego = self.sim.s.ego_index
        if self.sim.is_changing(ego):
            return KEEP_LANE
        return {STAY: KEEP_LANE, LEFT: CHANGE_LEFT, RIGHT: CHANGE_RIGHT}[self.sim.mobil_direction(ego)]

    def step(self, action: int) -> StepResult:
        if self.done:
            raise RuntimeError("episode is finished; call reset() first")
        if action not in ACTIONS:
            raise ValueError(f"invalid action {action!r}")
        sim = self.sim
        ego_i = sim.s.ego_index
        road = sim.s.road
        started = out_of_road = hard = soft = goal = False
        max_acc = 0.0
        background_crashes = 0

        if action != KEEP_LANE and not sim.is_changing(ego_i):
            direction = LEFT if action == CHANGE_LEFT else RIGHT
            target = sim.s.ego.lane_index + (1 if direction == LEFT else -1)
            if not 0 <= target < road.lane_count:
                out_of_road = True
            else:
                started = sim.start_lane_change(ego_i, direction)

        if not out_of_road:
            for _ in range(self.ticks_per_step):
                events = sim.tick()
                ego = sim.s.vehicles[ego_i]
                max_acc = max(max_acc, abs(ego.accel))
                for e in events:
                    if ego.id in (e.vehicle_a, e.vehicle_b):
                        hard |= e.kind == "hard"
                        soft |= e.kind == "soft"
                    elif e.kind == "hard":
                        background_crashes += 1
                if ego.y < 0.0 or ego.y > road.width:
                    out_of_road = True
                if hard or out_of_road:
                    break
                if ego.x >= self.scenario_cfg.d_max:
                    goal = True
                    break

        ego = sim.s.vehicles[ego_i]
        self.steps += 1
        reward = compute_reward(
            TransitionSummary(ego.speed, self.scenario_cfg.v_des_ego, max_acc, started, out_of_road, hard, soft, goal),
            self.cfg,
        )
        limit = self.steps >= self.cfg.step_limit
        self.done = out_of_road or hard or goal or limit
        terminal = ("out_of_road" if out_of_road else "hard_crash" if hard else "goal" if goal
                    else "step_limit" if limit else None)
        info = {
            "crash": "hard" if hard else "soft" if soft else None,
            "terminal": terminal,
            "distance": ego.x,
            "step": self.steps,
            "lane": ego.lane_index,
            "background_crashes": background_crashes,
        }
        return StepResult(self.observe(), reward, self.done, info)


class EpisodeLog:
    """Appends one CSV row per decision step."""

    def __init__(self, path):
        self.fh = open(path, "w", newline="", encoding="utf-8")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(EPISODE_LOG_HEADER)

    def write(self, episode: int, action: int, result: StepResult) -> None:
        i = result.info
        self.w.writerow((episode, i["step"], action, repr(result.reward.total), repr(result.reward.speed),
                         i["crash"] or "", repr(i["distance"]), i["lane"]))

    def close(self) -> None:
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
