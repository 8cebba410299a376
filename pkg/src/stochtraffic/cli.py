"""Command-line entry point: ``python -m stochtraffic <command>``."""

from __future__ import annotations

import argparse
import hashlib
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import torch

from . import weights
from .agent import RainbowAgent, transfer_init
from .config import RunConfig
from .env import HighwayEnv
from .gan import GanTrainer, evaluate_displacement, load_generator, save_generator
from .scenario import ConfigurationError, write_dump
from .traffic import GAN_MODE, MODES, simulate_frames, synthesize_records
from .trajectories import TrajectoryFormatError, TrajectoryRecord, extract_windows, parse_trajectories, resample, write_native
from .training import evaluate, greedy_policy, train_agent

log = logging.getLogger("stochtraffic")

GAN_METRICS_HEADER = ("iter", "loss_g", "loss_d", "ade", "fde")


class UsageError(Exception):
    pass


def _generator_for(mode: str, path: Optional[str]):
    if mode == GAN_MODE:
        if not path:
            raise UsageError("gan mode requires --generator WEIGHTS")
        return load_generator(path)
    return load_generator(path) if path else None


def _env(cfg: RunConfig, mode: str, generator) -> HighwayEnv:
    return HighwayEnv(mode, cfg.scenario, cfg.traffic_params(), cfg.env, generator)


def _records(cfg: RunConfig, args):
    if args.synthetic:
        seeds = [args.seed * 1000 + k for k in range(cfg.eval.synthetic_runs)]
        return synthesize_records(cfg.scenario, seeds, cfg.eval.synthetic_steps, cfg.traffic_params())
    if not args.data:
        raise UsageError("pass --data PATH or --synthetic")
    return parse_trajectories(args.data, args.format, args.swap_axes)


def cmd_simulate(cfg: RunConfig, args, out: Path) -> int:
    steps = cfg.eval.sim_steps if args.steps is None else args.steps
    mode = args.mode or cfg.eval.mode
    gen = _generator_for(mode, args.generator)
    frames = simulate_frames(cfg.scenario, args.seed, steps, mode, cfg.traffic_params(), gen)
    rows = write_dump(out / "trajectories.csv", frames)
    print(f"wrote {rows} rows to {out / 'trajectories.csv'}")
    return 0


def cmd_ingest(cfg: RunConfig, args, out: Path) -> int:
    records = _records(cfg, args)
    if not records:
        raise UsageError("dataset is empty")
    tracks = resample(records, cfg.gan.dt)
    resampled = [
        (vid, round((t.start_frame + k) * cfg.gan.dt, 10), float(t.xy[k, 0]), float(t.xy[k, 1]))
        for vid, t in sorted(tracks.items())
        for k in range(len(t.xy))
    ]
    write_native(out / "trajectories_native.csv", [TrajectoryRecord(*r) for r in resampled])
    print(f"ingested {len(records)} records, {len(tracks)} vehicles")
    return 0


def cmd_train_gan(cfg: RunConfig, args, out: Path) -> int:
    gcfg = cfg.gan if args.iterations is None else replace(cfg.gan, iterations=args.iterations)
    records = _records(cfg, args)
    windows = extract_windows(resample(records, gcfg.dt), gcfg.o_l, gcfg.p_l, gcfg.dt, seed=args.seed) if records else []
    if len(windows) < 2:
        raise UsageError(f"dataset yields {len(windows)} windows; need at least 2")
    windows.sort(key=lambda w: (w.start_frame, tuple(w.vehicle_ids)))
    split = max(1, min(len(windows) - 1, round(len(windows) * (1 - cfg.eval.holdout_fraction))))
    train, held = windows[:split], windows[split:]

    trainer = GanTrainer(gcfg, seed=args.seed)
    if args.resume:
        trainer.load_checkpoint(args.resume)
    untrained = evaluate_displacement(trainer.gen, held)
    ckpt = out / "gan_checkpoint.tgsm"
    with open(out / "gan_metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAN_METRICS_HEADER)
        while trainer.iteration < gcfg.iterations:
            m = trainer.train_step(trainer.sample_batch(train))
            if m["iter"] % cfg.eval.gan_log_every == 0 or m["iter"] == gcfg.iterations:
                w.writerow((m["iter"], repr(m["loss_g"]), repr(m["loss_d"]), repr(m["ade"]), repr(m["fde"])))
            if m["iter"] % cfg.eval.gan_checkpoint_every == 0:
                trainer.save_checkpoint(ckpt)
    trainer.save_checkpoint(ckpt)
    ade, fde = evaluate_displacement(trainer.gen, held)
    save_generator(out / "generator.tgsm", trainer.gen, {"iterations": trainer.iteration, "heldout_ade": ade})
    print(f"held-out ADE {ade:.4f} FDE {fde:.4f} (start of run: ADE {untrained[0]:.4f} FDE {untrained[1]:.4f})")
    return 0


def cmd_train_agent(cfg: RunConfig, args, out: Path) -> int:
    mode = args.mode or cfg.eval.mode
    gen = _generator_for(mode, args.generator)
    env = _env(cfg, mode, gen)
    steps = args.steps if args.steps is not None else (cfg.eval.transfer_steps if args.transfer_from else cfg.eval.train_steps)
    acfg = replace(cfg.agent, total_steps=steps)
    if args.transfer_from:
        agent = transfer_init(args.transfer_from, env.observation_size, acfg, seed=args.seed)
    else:
        agent = RainbowAgent(env.observation_size, acfg, seed=args.seed)
    train_agent(agent, env, steps, seed=args.seed, eval_every=cfg.eval.eval_every,
                eval_episodes=cfg.eval.eval_episodes, curve_path=out / "reward_curve.csv", log=log.info)
    path = out / f"agent_{mode}.tgsm"
    extra = {}
    if args.transfer_from:
        # name and content hash rather than the path, so outputs do not depend on where the run lives
        src = Path(args.transfer_from)
        extra = {"transfer_from": src.name, "transfer_from_sha256": hashlib.sha256(src.read_bytes()).hexdigest()}
    agent.save(path, mode=mode, extra=extra)
    print(f"saved {path}")
    return 0


def _parse_agent_spec(spec: str) -> tuple[str, str]:
    name, sep, path = spec.partition("=")
    if not sep:
        path, name = spec, Path(spec).stem
    return name, path


def cmd_evaluate(cfg: RunConfig, args, out: Path) -> int:
    mode = args.mode or cfg.eval.mode
    gen = _generator_for(mode, args.generator)
    env = _env(cfg, mode, gen)
    policies = {}
    for spec in args.agent or []:
        name, path = _parse_agent_spec(spec)
        _, meta = weights.load(path)
        if meta.get("kind") != "agent":
            raise UsageError(f"{path} is not an agent checkpoint")
        if int(meta["obs_dim"]) != env.observation_size:
            raise UsageError(f"{path} expects {meta['obs_dim']} observations; {mode} env with this scenario "
                             f"produces {env.observation_size}")
        policies[name] = greedy_policy(RainbowAgent.load(path))
    episodes = args.episodes if args.episodes is not None else cfg.eval.episodes
    report = evaluate(env, policies, episodes, args.seed)
    report.write_csv(out / "evaluation.csv")
    print(report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochtraffic", description="Stochastic highway traffic simulator and agents.")
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run traffic and dump trajectories")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--steps", type=int)
    s.add_argument("--generator")

    for name, help_ in (("ingest", "parse and resample a trajectory file"), ("train-gan", "train the trajectory generator")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--data")
        s.add_argument("--format", choices=("native", "ngsim"), default="native")
        s.add_argument("--swap-axes", action="store_true")
        s.add_argument("--synthetic", action="store_true", help="use rule-driver trajectories instead of a file")
        if name == "train-gan":
            s.add_argument("--iterations", type=int)
            s.add_argument("--resume", help="trainer checkpoint to continue from")

    s = sub.add_parser("train-agent", help="train a lane-change agent")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--steps", type=int)
    s.add_argument("--generator")
    s.add_argument("--transfer-from")

    s = sub.add_parser("evaluate", help="compare agents with the MOBIL baseline on paired seeds")
    s.add_argument("--agent", action="append", help="NAME=PATH of an agent checkpoint (repeatable)")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--episodes", type=int)
    s.add_argument("--generator")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "train-gan": cmd_train_gan,
    "train-agent": cmd_train_agent,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, out)
    except (UsageError, ConfigurationError, TrajectoryFormatError, weights.WeightFileError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
