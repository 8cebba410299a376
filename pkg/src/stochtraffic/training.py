"""Agent training loop and paired-seed policy evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .agent import RainbowAgent
from .env import ACTIONS, HighwayEnv

CURVE_HEADER = ("step", "episodes", "mean_reward", "reward_std", "hard_crashes", "loss")
REPORT_HEADER = ("policy", "episodes", "hard_crashes", "soft_crashes", "mean_reward", "reward_std", "normalized_vs_mobil")

Policy = Callable[[HighwayEnv, np.ndarray], int]


@dataclass
class EpisodeOutcome:
    seed: int
    total_reward: float
    steps: int
    hard_crash: bool
    soft_crashes: int
    terminal: Optional[str]
    scenario_hash: str


def run_episode(env: HighwayEnv, policy: Policy, seed: int) -> EpisodeOutcome:
    obs = env.reset(seed)
    fingerprint = env.scenario.fingerprint()
    total, soft, done = 0.0, 0, False
    res = None
    while not done:
        res = env.step(policy(env, obs))
        total += res.reward.total
        soft += res.info["crash"] == "soft"
        obs, done = res.observation, res.done
    return EpisodeOutcome(seed, total, res.info["step"], res.info["terminal"] == "hard_crash", soft,
                          res.info["terminal"], fingerprint)


def greedy_policy(agent: RainbowAgent) -> Policy:
    return lambda env, obs: agent.act(obs, explore=False)


def mobil_policy(env: HighwayEnv, obs) -> int:
    return env.mobil_action()


def random_policy(seed: int) -> Policy:
    rng = np.random.default_rng(seed)
    return lambda env, obs: int(rng.integers(len(ACTIONS)))


@dataclass
class PolicyStats:
    policy: str
    episodes: int
    hard_crashes: int
    soft_crashes: int
    mean_reward: float
    reward_std: float
    normalized_vs_mobil: float = math.nan
    outcomes: list = field(default_factory=list, repr=False)

    @property
    def standard_error(self) -> float:
        return self.reward_std / math.sqrt(self.episodes)

    @classmethod
    def from_outcomes(cls, name: str, outcomes: list[EpisodeOutcome]) -> "PolicyStats":
        if not outcomes:
            raise ValueError("need at least one episode")
        outcomes = sorted(outcomes, key=lambda o: o.seed)
        r = np.array([o.total_reward for o in outcomes])
        return cls(name, len(outcomes), sum(o.hard_crash for o in outcomes), sum(o.soft_crashes for o in outcomes),
                   float(r.mean()), float(r.std(ddof=1)) if len(r) > 1 else 0.0, outcomes=outcomes)


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [seed * 100_003 + k for k in range(episodes)]


def evaluate_policy(env: HighwayEnv, name: str, policy: Policy, seeds) -> PolicyStats:
    return PolicyStats.from_outcomes(name, [run_episode(env, policy, s) for s in seeds])


@dataclass
class EvaluationReport:
    mode: str
    seeds: list
    stats: list[PolicyStats]

    def __post_init__(self):
        hashes = [tuple(o.scenario_hash for o in st.outcomes) for st in self.stats]
        if any(h != hashes[0] for h in hashes):
            raise AssertionError("policies were not evaluated on identical scenarios")

    def __getitem__(self, name: str) -> PolicyStats:
        for st in self.stats:
            if st.policy == name:
                return st
        raise KeyError(name)

    def rows(self):
        for st in self.stats:
            yield (st.policy, st.episodes, st.hard_crashes, st.soft_crashes, repr(st.mean_reward),
                   repr(st.reward_std), repr(st.normalized_vs_mobil))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            w.writerows(self.rows())

    def table(self) -> str:
        lines = [f"mode={self.mode} episodes={len(self.seeds)}",
                 f"{'policy':<16}{'hard':>6}{'soft':>6}{'mean':>10}{'std':>10}{'% MOBIL':>10}"]
        for st in self.stats:
            lines.append(f"{st.policy:<16}{st.hard_crashes:>6}{st.soft_crashes:>6}{st.mean_reward:>10.2f}"
                         f"{st.reward_std:>10.2f}{st.normalized_vs_mobil:>10.2f}")
        return "\n".join(lines)


def evaluate(env: HighwayEnv, policies: dict[str, Policy], episodes: int, seed: int,
             include_mobil: bool = True) -> EvaluationReport:
    """Run every policy on the same seed sequence; ratios are against the paired MOBIL runs."""
    if episodes < 1:
        raise ValueError("episodes must be positive")
    seeds = episode_seeds(seed, episodes)
    policies = dict(policies)
    if include_mobil:
        policies.setdefault("mobil", mobil_policy)
    stats = [evaluate_policy(env, name, pol, seeds) for name, pol in policies.items()]
    if "mobil" in policies:
        base = next(st for st in stats if st.policy == "mobil").mean_reward
        for st in stats:
            st.normalized_vs_mobil = 100.0 * (st.mean_reward / base) if base != 0 else math.nan
    return EvaluationReport(env.mode, seeds, stats)


@dataclass
class CurvePoint:
    step: int
    episodes: int
    mean_reward: float
    reward_std: float
    hard_crashes: int
    loss: float


def train_agent(
    agent: RainbowAgent,
    env: HighwayEnv,
    steps: int,
    seed: int = 0,
    eval_env: Optional[HighwayEnv] = None,
    eval_every: int = 0,
    eval_episodes: int = 5,
    curve_path=None,
    log: Optional[Callable[[str], None]] = None,
) -> list[CurvePoint]:
    """Run ``steps`` environment steps with one update per step after warmup.

    Every ``eval_every`` steps the greedy policy is scored on a fixed seed
    set; the resulting points are appended to ``curve_path`` when given.
    """
    # a separate instance so scoring never disturbs the running training episode
    eval_env = eval_env or HighwayEnv(env.mode, env.scenario_cfg, env.traffic, env.cfg, env.generator)
    eval_seeds = episode_seeds(seed + 7919, eval_episodes)
    episode_rng = np.random.default_rng(seed)
    curve: list[CurvePoint] = []
    fh = writer = None
    if curve_path is not None:
        fh = open(curve_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
    try:
        obs = env.reset(int(episode_rng.integers(2**31)))
        losses: list[float] = []
        for t in range(1, steps + 1):
            action = agent.act(obs)
            res = env.step(action)
            agent.observe(obs, action, res.reward.total, res.observation, res.done)
            obs = env.reset(int(episode_rng.integers(2**31))) if res.done else res.observation
            if agent.ready:
                losses.append(agent.train_step())
            if eval_every and t % eval_every == 0:
                st = evaluate_policy(eval_env, "agent", greedy_policy(agent), eval_seeds)
                point = CurvePoint(t, st.episodes, st.mean_reward, st.reward_std, st.hard_crashes,
                                   float(np.mean(losses)) if losses else math.nan)
                losses = []
                curve.append(point)
                if writer is not None:
                    writer.writerow((point.step, point.episodes, repr(point.mean_reward), repr(point.reward_std),
                                     point.hard_crashes, repr(point.loss)))
                    fh.flush()
                if log:
                    log(f"step {t}: eval mean {st.mean_reward:.2f} +/- {st.reward_std:.2f}, hard {st.hard_crashes}")
    finally:
        if fh is not None:
            fh.close()
    return curve
