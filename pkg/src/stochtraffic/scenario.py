"""Highway world: road geometry, vehicle population, seeded initialization,
fixed-step advancement and crash detection."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .dynamics import BicycleParams, ControlInput, bicycle_step

VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 2.5

EGO = "ego"
OTHER = "other"
RULE_BASED = "rule_based"
GENERATIVE = "generative"

DUMP_HEADER = ("t", "vehicle_id", "x_m", "y_m", "heading_rad", "speed_mps", "lane_index", "role")


class ConfigurationError(ValueError):
    """Raised when a configuration violates its invariants."""


@dataclass(frozen=True)
class RoadConfig:
    lane_count: int = 3
    lane_width: float = 4.0
    episode_length: float = 5000.0

    def __post_init__(self):
        if self.lane_count < 1:
            raise ConfigurationError("lane_count must be >= 1")
        if self.lane_width <= VEHICLE_WIDTH:
            raise ConfigurationError("lane_width must exceed the vehicle width")
        if self.episode_length <= 0:
            raise ConfigurationError("episode_length must be positive")

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        """Index of the nearest lane centerline, clamped onto the road."""
        lane = int(math.floor(y / self.lane_width))
        return min(max(lane, 0), self.lane_count - 1)

    @property
    def width(self) -> float:
        return self.lane_count * self.lane_width


@dataclass
class VehicleState:
    id: int
    x: float
    y: float
    heading: float
    speed: float
    accel: float
    lane_index: int
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    desired_speed: float = 25.0
    role: str = OTHER
    driver: str = RULE_BASED

    @property
    def is_ego(self) -> bool:
        return self.role == EGO


@dataclass(frozen=True)
class ScenarioConfig:
    """Initialization parameters; defaults follow the simulation parameter table."""

    d_delta: float = 25.0
    d_long: float = 200.0
    v_des_ego: float = 25.0
    d_max: float = 5000.0
    v_des_range: tuple[float, float] = (18.0, 26.0)
    v0_rear_range: tuple[float, float] = (15.0, 25.0)
    v0_front_range: tuple[float, float] = (10.0, 12.0)
    v0_ego_range: tuple[float, float] = (10.0, 15.0)
    m: int = 9
    n: int = 3
    sim_dt: float = 0.1
    lane_width: float = 4.0
    soft_gap: float = 2.0
    soft_ttc: float = 1.0

    def __post_init__(self):
        if self.d_delta <= 0:
            raise ConfigurationError("d_delta must be positive")
        if self.d_long <= self.d_delta:
            raise ConfigurationError("d_long must exceed d_delta")
        for name in ("v_des_range", "v0_rear_range", "v0_front_range", "v0_ego_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} must be ordered (min <= max)")
        if self.m < 1 or self.m % 2 == 0:
            raise ConfigurationError("m must be a positive odd number so a median vehicle exists")
        if self.n < 1:
            raise ConfigurationError("n must be >= 1")
        if self.sim_dt <= 0:
            raise ConfigurationError("sim_dt must be positive")
        # the most balanced lane split must fit inside the spread
        per_lane = math.ceil(self.m / self.n)
        if (per_lane - 1) * (self.d_delta + VEHICLE_LENGTH) > self.d_long:
            raise ConfigurationError(
                f"infeasible packing: {per_lane} vehicles per lane need more than d_long={self.d_long} m"
            )

    @property
    def road(self) -> RoadConfig:
        return RoadConfig(lane_count=self.n, lane_width=self.lane_width, episode_length=self.d_max)


@dataclass
class Scenario:
    road: RoadConfig
    vehicles: list[VehicleState]
    clock: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)
    dt: float = 0.1

    @property
    def ego(self) -> VehicleState:
        for v in self.vehicles:
            if v.role == EGO:
                return v
        raise LookupError("scenario has no ego vehicle")

    @property
    def ego_index(self) -> int:
        for i, v in enumerate(self.vehicles):
            if v.role == EGO:
                return i
        raise LookupError("scenario has no ego vehicle")

    def copy(self) -> "Scenario":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return Scenario(self.road, [replace(v) for v in self.vehicles], self.clock, rng, self.dt)

    def fingerprint(self) -> str:
        """Stable hash of the vehicle population, used to pair evaluation runs."""
        h = hashlib.sha256()
        for v in self.vehicles:
            h.update(repr((v.id, v.x, v.y, v.heading, v.speed, v.lane_index, v.desired_speed, v.role)).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class CrashEvent:
    kind: str  # "hard" | "soft"
    vehicle_a: int
    vehicle_b: int
    time: float


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _place(config: ScenarioConfig, rng: np.random.Generator, max_attempts: int = 100_000):
    min_sep = config.d_delta + VEHICLE_LENGTH
    for _ in range(max_attempts):
        lanes = rng.integers(0, config.n, size=config.m)
        xs = rng.uniform(0.0, config.d_long, size=config.m)
        ok = True
        for lane in range(config.n):
            lane_x = np.sort(xs[lanes == lane])
            if lane_x.size > 1 and np.min(np.diff(lane_x)) < min_sep:
                ok = False
                break
        if ok:
            return xs, lanes
    raise ConfigurationError("could not place vehicles; packing constraints too tight")


def init_scenario(config: ScenarioConfig, seed: int, driver: str = RULE_BASED) -> Scenario:
    """Place ``config.m`` vehicles and pick the median-by-x one as ego.

    Same-lane vehicles keep a bumper-to-bumper gap of at least ``d_delta``;
    centers span at most ``d_long``. Positions are shifted so the ego starts
    at x = 0, which makes ``ego.x`` the distance travelled.
    """
    rng = np.random.default_rng(seed)
    road = config.road
    if config.m == 1:
        xs, lanes = np.zeros(1), rng.integers(0, config.n, size=1)
    else:
        xs, lanes = _place(config, rng)
    order = np.argsort(xs, kind="stable")
    xs, lanes = xs[order], lanes[order]
    ego_idx = config.m // 2
    xs = xs - xs[ego_idx]

    vehicles = []
    for i in range(config.m):
        if i == ego_idx:
            role, v0, v_des = EGO, _uniform(rng, config.v0_ego_range), config.v_des_ego
        else:
            role = OTHER
            v0 = _uniform(rng, config.v0_front_range if i > ego_idx else config.v0_rear_range)
            v_des = _uniform(rng, config.v_des_range)
        lane = int(lanes[i])
        vehicles.append(
            VehicleState(
                id=i,
                x=float(xs[i]),
                y=road.lane_center(lane),
                heading=0.0,
                speed=v0,
                accel=0.0,
                lane_index=lane,
                desired_speed=v_des,
                role=role,
                driver=RULE_BASED if role == EGO else driver,
            )
        )
    return Scenario(road=road, vehicles=vehicles, clock=0.0, rng=rng, dt=config.sim_dt)


def step_world(
    s: Scenario,
    controls: Sequence[ControlInput | tuple[float, float]],
    params: BicycleParams | None = None,
) -> Scenario:
    """Advance every vehicle by one ``s.dt`` tick; returns a new Scenario."""
    if len(controls) != len(s.vehicles):
        raise ValueError(f"expected {len(s.vehicles)} controls, got {len(controls)}")
    params = params or BicycleParams()
    road = s.road
    moved = []
    for v, c in zip(s.vehicles, controls):
        if not isinstance(c, ControlInput):
            c = ControlInput(*c)
        nv = bicycle_step(v, c, params, s.dt)
        nv.lane_index = road.lane_of(nv.y)
        moved.append(nv)
    return Scenario(road, moved, s.clock + s.dt, s.rng, s.dt)


def _corners(v: VehicleState) -> np.ndarray:
    c, sn = math.cos(v.heading), math.sin(v.heading)
    hl, hw = v.length / 2, v.width / 2
    local = ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    return np.array([(v.x + dx * c - dy * sn, v.y + dx * sn + dy * c) for dx, dy in local])


def rectangles_overlap(a: VehicleState, b: VehicleState) -> bool:
    """Separating-axis test on the two oriented bounding rectangles."""
    reach = (a.length + a.width + b.length + b.width) / 2
    if abs(a.x - b.x) > reach or abs(a.y - b.y) > reach:
        return False
    ca, cb = _corners(a), _corners(b)
    for v in (a, b):
        c, sn = math.cos(v.heading), math.sin(v.heading)
        for axis in ((c, sn), (-sn, c)):
            ax = np.asarray(axis)
            pa, pb = ca @ ax, cb @ ax
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def bumper_gap(rear: VehicleState, front: VehicleState) -> float:
    return front.x - rear.x - (front.length + rear.length) / 2


def detect_collisions(s: Scenario, soft_gap: float = 2.0, soft_ttc: float = 1.0) -> list[CrashEvent]:
    """Hard events for rectangle overlap; soft events for dangerous same-lane approach.

    A pair reports at most one event and ids are ordered (a < b), so the
    result does not depend on vehicle order.
    """
    events = []
    vs = s.vehicles
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            a, b = vs[i], vs[j]
            lo, hi = (a, b) if a.id < b.id else (b, a)
            if rectangles_overlap(a, b):
                events.append(CrashEvent("hard", lo.id, hi.id, s.clock))
                continue
            if a.lane_index != b.lane_index:
                continue
            rear, front = (a, b) if a.x <= b.x else (b, a)
            gap = bumper_gap(rear, front)
            closing = rear.speed - front.speed
            if gap < soft_gap or (closing > 0 and gap / closing < soft_ttc):
                events.append(CrashEvent("soft", lo.id, hi.id, s.clock))
    return events


def dump_rows(s: Scenario) -> Iterable[tuple]:
    for v in s.vehicles:
        yield (repr(round(s.clock, 10)), v.id, repr(v.x), repr(v.y), repr(v.heading), repr(v.speed), v.lane_index, v.role)


def write_dump(path, frames: Iterable[Scenario]) -> int:
    """Write scenario frames as the trajectory-dump CSV; returns the row count."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DUMP_HEADER)
        for frame in frames:
            for row in dump_rows(frame):
                w.writerow(row)
                rows += 1
    return rows
