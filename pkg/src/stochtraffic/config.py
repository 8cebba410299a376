"""INI-style run configuration.

Each section maps onto one parameter dataclass. Unknown sections or keys are
rejected. Serialized files carry a provenance comment per key: ``published``
for values taken from the reference parameter tables, ``invented`` for
committed defaults.
"""

from __future__ import annotations

import configparser
import io
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .agent import AgentConfig
from .drivers import IdmParams, MobilParams
from .dynamics import TwoPointParams
from .env import EnvConfig
from .gan import GanConfig
from .lanechange import DurationModel
from .scenario import ConfigurationError, ScenarioConfig
from .traffic import IDM_MODE, TrafficParams


@dataclass(frozen=True)
class DriverConfig:
    sr_lc: float = 0.1
    decision_ticks: int = 10
    lane_change_duration: float = 4.0
    duration_mean: float = 5.0
    duration_std: float = 1.5
    duration_min: float = 1.5
    duration_max: float = 10.0
    gan_accel_min: float = -20.0
    gan_accel_max: float = 5.0
    gan_lane_margin: float = 0.25
    near_distance: float = 8.0
    far_distance: float = 40.0
    k_near: float = 0.4
    k_far: float = 0.6
    k_heading: float = 0.05


@dataclass(frozen=True)
class EvalConfig:
    mode: str = IDM_MODE
    episodes: int = 100
    sim_steps: int = 100
    train_steps: int = 100_000
    transfer_steps: int = 30_000
    eval_every: int = 5000
    eval_episodes: int = 10
    gan_log_every: int = 50
    gan_checkpoint_every: int = 500
    holdout_fraction: float = 0.2
    synthetic_runs: int = 6
    synthetic_steps: int = 100


SECTIONS: dict[str, type] = {
    "scenario": ScenarioConfig,
    "idm": IdmParams,
    "mobil": MobilParams,
    "gan": GanConfig,
    "agent": AgentConfig,
    "env": EnvConfig,
    "drivers": DriverConfig,
    "eval": EvalConfig,
}

# keys whose defaults come from the reference parameter tables
PUBLISHED = {
    "scenario": {"d_delta", "d_long", "v_des_ego", "d_max", "v_des_range", "v0_rear_range", "v0_front_range",
                 "v0_ego_range", "m", "n", "sim_dt"},
    "idm": {"d_0", "T", "b", "d_max_gap", "a_min", "a_max", "delta_exp"},
    "mobil": {"a_th", "q_rear", "p_side", "b_safe"},
    "gan": {"o_l", "p_l", "s_mlp", "dt"},
    "agent": {"hidden"},
    "env": {"lane_change_penalty", "out_of_road_penalty", "hard_crash_penalty", "soft_crash_penalty",
            "goal_reward", "speed_floor", "low_acc_threshold"},
    "drivers": {"duration_mean"},
    "eval": set(),
}


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, kind: Any, where: str) -> Any:
    try:
        if kind is bool:
            return {"true": True, "false": False}[text.strip().lower()]
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text.strip()
        if typing.get_origin(kind) is tuple:
            inner = typing.get_args(kind)[0]
            return tuple(_parse(p, inner, where) for p in text.split(","))
    except (ValueError, KeyError) as exc:
        raise ConfigurationError(f"{where}: cannot parse {text!r} as {getattr(kind, '__name__', kind)}") from exc
    raise ConfigurationError(f"{where}: unsupported field type {kind}")


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    gan: GanConfig = field(default_factory=GanConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    drivers: DriverConfig = field(default_factory=DriverConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_string(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str  # keep key case (idm uses ``T``)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config: {exc}") from exc
        parts = {}
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigurationError(f"unknown section [{section}]; expected one of {sorted(SECTIONS)}")
            klass = SECTIONS[section]
            hints = typing.get_type_hints(klass)
            known = {f.name for f in fields(klass)}
            values = {}
            for key, raw in cp.items(section):
                if key not in known:
                    raise ConfigurationError(f"unknown key {key!r} in [{section}]")
                values[key] = _parse(raw, hints[key], f"[{section}] {key}")
            try:
                parts[section] = klass(**values)
            except ValueError as exc:
                raise ConfigurationError(f"[{section}]: {exc}") from exc
        return cls(**parts)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_string(text)

    def to_string(self) -> str:
        out = io.StringIO()
        for section, klass in SECTIONS.items():
            obj = getattr(self, section)
            out.write(f"[{section}]\n")
            for f in fields(klass):
                prov = "published" if f.name in PUBLISHED[section] else "invented"
                out.write(f"# provenance = \"{prov}\"\n{f.name} = {_format(getattr(obj, f.name))}\n")
            out.write("\n")
        return out.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_string(), encoding="utf-8")

    def traffic_params(self) -> TrafficParams:
        d = self.drivers
        steering = replace(TwoPointParams(), near_distance=d.near_distance, far_distance=d.far_distance,
                           k_near=d.k_near, k_far=d.k_far, k_heading=d.k_heading)
        return TrafficParams(
            idm=self.idm,
            mobil=self.mobil,
            steering=steering,
            durations=DurationModel(d.duration_mean, d.duration_std, (d.duration_min, d.duration_max)),
            sr_lc=d.sr_lc,
            decision_ticks=d.decision_ticks,
            lane_change_duration=d.lane_change_duration,
            gan_accel_bounds=(d.gan_accel_min, d.gan_accel_max),
            gan_lane_margin=d.gan_lane_margin,
        )
