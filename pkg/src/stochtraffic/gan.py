"""Social-pooling trajectory GAN.

The generator embeds per-step displacements, encodes each vehicle's history
with a shared recurrent cell, max-pools the encoded states of the other
vehicles in its scene, and rolls out future displacements from a decoder
seeded with ``[context; z]``. Everything it consumes is relative, so a rigid
translation of a scene translates the prediction by the same amount.
"""

from __future__ import annotations

import base64
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import weights
from .nn import DTYPE, LSTMCell, check_finite, clip_gradients, linear, load_module_arrays, module_arrays
from .trajectories import SceneWindow, displacement_errors

Scenes = Sequence[tuple[int, int]]


@dataclass(frozen=True)
class GanConfig:
    o_l: int = 8
    p_l: int = 8
    s_mlp: int = 64
    hidden: int = 64
    pool_dim: int = 64
    z_dim: int = 8
    rel_scale: float = 0.02
    batch_size: int = 8
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    lambda_adv: float = 1.0
    k_v: int = 4
    iterations: int = 2000
    dt: float = 0.1

    def __post_init__(self):
        if self.o_l < 1 or self.p_l < 1:
            raise ValueError("o_l and p_l must be >= 1")
        if self.k_v < 1:
            raise ValueError("k_v must be >= 1")


def displacements(seq: torch.Tensor) -> torch.Tensor:
    """Per-step displacement with a leading zero step: ``(N, T, 2) -> (N, T, 2)``."""
    d = seq[:, 1:] - seq[:, :-1]
    return torch.cat([torch.zeros_like(seq[:, :1]), d], dim=1)


class TrajectoryGenerator(nn.Module):
    def __init__(self, cfg: GanConfig = GanConfig()):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Sequential(linear(2, cfg.s_mlp), nn.ReLU())
        self.encoder = LSTMCell(cfg.s_mlp, cfg.hidden)
        self.pool_mlp = nn.Sequential(linear(2 + cfg.hidden, cfg.pool_dim), nn.ReLU())
        # stands in for the max over an empty neighbour set
        self.placeholder = nn.Parameter(torch.zeros(cfg.pool_dim, dtype=DTYPE))
        self.context_mlp = nn.Sequential(linear(cfg.hidden + cfg.pool_dim, cfg.pool_dim), nn.ReLU())
        self.dec_embed = nn.Sequential(linear(2, cfg.s_mlp), nn.ReLU())
        self.decoder = LSTMCell(cfg.s_mlp, cfg.pool_dim + cfg.z_dim)
        self.head = linear(cfg.pool_dim + cfg.z_dim, 2)

    def embed_position(self, xy: torch.Tensor) -> torch.Tensor:
        return self.embed(xy)

    def encode(self, observed: torch.Tensor) -> torch.Tensor:
        """Final encoder hidden state per vehicle for ``(N, T, 2)`` positions."""
        e = self.embed(displacements(observed))
        h, c = self.encoder.initial_state(observed.shape[0])
        for t in range(observed.shape[1]):
            h, c = self.encoder(e[:, t], (h, c))
        return h

    def social_pool(self, hidden: torch.Tensor, positions: torch.Tensor, scenes: Optional[Scenes] = None) -> torch.Tensor:
        """Elementwise max over the other vehicles' pooled contributions."""
        if scenes is None:
            scenes = [(0, hidden.shape[0])]
        out = []
        for a, b in scenes:
            h, p = hidden[a:b], positions[a:b]
            n = b - a
            if n == 1:
                out.append(self.placeholder.unsqueeze(0))
                continue
            rel = (p.unsqueeze(0) - p.unsqueeze(1)) * self.cfg.rel_scale  # [i, j] = p_j - p_i
            feats = torch.cat([rel, h.unsqueeze(0).expand(n, n, -1)], dim=-1)
            contrib = self.pool_mlp(feats)
            mask = torch.eye(n, dtype=torch.bool).unsqueeze(-1)
            out.append(contrib.masked_fill(mask, -math.inf).amax(dim=1))
        return torch.cat(out, dim=0)

    def context(self, observed: torch.Tensor, scenes: Optional[Scenes] = None) -> torch.Tensor:
        h = self.encode(observed)
        pooled = self.social_pool(h, observed[:, -1], scenes)
        return self.context_mlp(torch.cat([h, pooled], dim=-1))

    def decode_future(
        self,
        ctx: torch.Tensor,
        z: torch.Tensor,
        last_position: torch.Tensor,
        last_displacement: Optional[torch.Tensor] = None,
        steps: Optional[int] = None,
    ) -> torch.Tensor:
        """Roll out ``steps`` positions from decoder hidden state ``[ctx; z]``."""
        steps = self.cfg.p_l if steps is None else steps
        h = torch.cat([ctx, z], dim=-1)
        c = torch.zeros_like(h)
        d = torch.zeros_like(last_position) if last_displacement is None else last_displacement
        pos = last_position
        out = []
        for _ in range(steps):
            h, c = self.decoder(self.dec_embed(d), (h, c))
            d = self.head(h)
            pos = pos + d
            out.append(pos)
        return torch.stack(out, dim=1)

    def forward(self, observed: torch.Tensor, z: torch.Tensor, scenes: Optional[Scenes] = None, steps: Optional[int] = None):
        ctx = self.context(observed, scenes)
        last_d = observed[:, -1] - observed[:, -2] if observed.shape[1] > 1 else None
        return self.decode_future(ctx, z, observed[:, -1], last_d, steps)

    def sample_z(self, n: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return torch.randn(n, self.cfg.z_dim, dtype=DTYPE, generator=generator)


class TrajectoryDiscriminator(nn.Module):
    def __init__(self, cfg: GanConfig = GanConfig()):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Sequential(linear(2, cfg.s_mlp), nn.ReLU())
        self.encoder = LSTMCell(cfg.s_mlp, cfg.hidden)
        self.classifier = nn.Sequential(linear(cfg.hidden, cfg.hidden), nn.ReLU(), linear(cfg.hidden, 1))

    def logits(self, traj: torch.Tensor) -> torch.Tensor:
        e = self.embed(displacements(traj))
        h, c = self.encoder.initial_state(traj.shape[0])
        for t in range(traj.shape[1]):
            h, c = self.encoder(e[:, t], (h, c))
        return self.classifier(h).squeeze(-1)

    def forward(self, traj: torch.Tensor) -> torch.Tensor:
        """Probability that each ``(observed ++ future)`` trajectory is real."""
        return torch.sigmoid(self.logits(traj))


def collate(windows: Sequence[SceneWindow]):
    """Stack windows into ``(observed, future, scenes)`` tensors."""
    scenes, start = [], 0
    for w in windows:
        scenes.append((start, start + len(w.vehicle_ids)))
        start += len(w.vehicle_ids)
    obs = torch.from_numpy(np.concatenate([w.observed for w in windows])).to(DTYPE)
    fut = torch.from_numpy(np.concatenate([w.future for w in windows])).to(DTYPE)
    return obs, fut, scenes


def random_walk_fakes(observed: torch.Tensor, p_l: int, scale: float, generator: torch.Generator) -> torch.Tensor:
    """Futures that wander from the last observed position with Gaussian steps."""
    steps = torch.randn(observed.shape[0], p_l, 2, dtype=DTYPE, generator=generator) * scale
    return observed[:, -1:] + steps.cumsum(dim=1)


def _rng_state_json(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _torch_gen_state(g: torch.Generator) -> str:
    return base64.b64encode(g.get_state().numpy().tobytes()).decode("ascii")


def _set_torch_gen_state(g: torch.Generator, s: str) -> None:
    g.set_state(torch.frombuffer(bytearray(base64.b64decode(s)), dtype=torch.uint8))


def optimizer_arrays(opt: torch.optim.Optimizer, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for idx, st in opt.state_dict()["state"].items():
        for key, val in st.items():
            out[f"{prefix}.{idx}.{key}"] = np.asarray(val.detach().cpu().numpy(), dtype=np.float64)
    return out


def load_optimizer_arrays(opt: torch.optim.Optimizer, arrays: dict[str, np.ndarray], prefix: str) -> None:
    sd = opt.state_dict()
    state: dict[int, dict] = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix + "."):
            continue
        _, idx, key = name.rsplit(".", 2)
        t = torch.from_numpy(arr.copy())
        if key == "step":
            t = t.to(torch.float32)
        state.setdefault(int(idx), {})[key] = t
    sd["state"] = state
    opt.load_state_dict(sd)


class GanTrainer:
    """Adversarial trainer owning both models, their optimizers and RNG streams."""

    def __init__(self, cfg: GanConfig = GanConfig(), seed: int = 0,
                 generator: Optional[TrajectoryGenerator] = None,
                 discriminator: Optional[TrajectoryDiscriminator] = None):
        self.cfg = cfg
        torch.manual_seed(seed)
        self.gen = generator or TrajectoryGenerator(cfg)
        self.disc = discriminator or TrajectoryDiscriminator(cfg)
        self.opt_g = torch.optim.Adam(self.gen.parameters(), lr=cfg.lr_g)
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=cfg.lr_d)
        self.rng = np.random.default_rng(seed)
        self.noise = torch.Generator().manual_seed(seed)
        self.iteration = 0

    def sample_batch(self, windows: Sequence[SceneWindow]) -> list[SceneWindow]:
        idx = self.rng.choice(len(windows), size=min(self.cfg.batch_size, len(windows)), replace=False)
        return [windows[i] for i in idx]

    def discriminator_step(self, obs, fut, fake_fut) -> tuple[float, float]:
        """One BCE update; returns ``(loss, accuracy)``."""
        real = torch.cat([obs, fut], dim=1)
        fake = torch.cat([obs, fake_fut.detach()], dim=1)
        lr, lf = self.disc.logits(real), self.disc.logits(fake)
        loss = F.binary_cross_entropy_with_logits(lr, torch.ones_like(lr)) + \
            F.binary_cross_entropy_with_logits(lf, torch.zeros_like(lf))
        check_finite(loss, f"discriminator loss at iteration {self.iteration}")
        self.opt_d.zero_grad()
        loss.backward()
        clip_gradients(self.disc.parameters())
        self.opt_d.step()
        acc = 0.5 * ((lr > 0).double().mean() + (lf <= 0).double().mean())
        return loss.item(), acc.item()

    def train_step(self, batch: Sequence[SceneWindow]) -> dict[str, float]:
        """One discriminator update followed by one generator update."""
        if not batch:
            raise ValueError("empty batch")
        cfg = self.cfg
        obs, fut, scenes = collate(batch)
        n = obs.shape[0]

        loss_d = 0.0
        if cfg.lambda_adv > 0:
            with torch.no_grad():
                fake = self.gen(obs, self.gen.sample_z(n, self.noise), scenes)
            loss_d, _ = self.discriminator_step(obs, fut, fake)

        preds = [self.gen(obs, self.gen.sample_z(n, self.noise), scenes) for _ in range(cfg.k_v)]
        l2 = torch.stack([((p - fut) ** 2).sum(-1).mean(-1) for p in preds])  # (k_v, N)
        variety = l2.min(dim=0).values.mean()
        loss_g = variety
        if cfg.lambda_adv > 0:
            lf = self.disc.logits(torch.cat([obs, preds[0]], dim=1))
            loss_g = loss_g + cfg.lambda_adv * F.binary_cross_entropy_with_logits(lf, torch.ones_like(lf))
        if not torch.isfinite(loss_g):
            raise FloatingPointError(
                f"non-finite generator loss at iteration {self.iteration}: variety={variety.item()!r}, loss_d={loss_d!r}"
            )
        self.opt_g.zero_grad()
        loss_g.backward()
        clip_gradients(self.gen.parameters())
        self.opt_g.step()
        self.iteration += 1
        ade, fde = displacement_errors(preds[0].detach().numpy(), fut.numpy())
        return {"iter": self.iteration, "loss_g": loss_g.item(), "loss_d": loss_d, "ade": ade, "fde": fde}

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = module_arrays(self.gen, "gen.")
        arrays.update(module_arrays(self.disc, "disc."))
        arrays.update(optimizer_arrays(self.opt_g, "opt_g"))
        arrays.update(optimizer_arrays(self.opt_d, "opt_d"))
        return arrays

    def save_checkpoint(self, path) -> None:
        meta = {
            "kind": "gan-checkpoint",
            "iteration": self.iteration,
            "config": asdict(self.cfg),
            "rng": _rng_state_json(self.rng),
            "noise": _torch_gen_state(self.noise),
        }
        weights.save(path, self.state_arrays(), meta)

    def load_checkpoint(self, path) -> None:
        arrays, meta = weights.load(path)
        load_module_arrays(self.gen, {k: v for k, v in arrays.items() if k.startswith("gen.")}, "gen.")
        load_module_arrays(self.disc, {k: v for k, v in arrays.items() if k.startswith("disc.")}, "disc.")
        load_optimizer_arrays(self.opt_g, arrays, "opt_g")
        load_optimizer_arrays(self.opt_d, arrays, "opt_d")
        self.rng.bit_generator.state = meta["rng"]
        _set_torch_gen_state(self.noise, meta["noise"])
        self.iteration = int(meta["iteration"])


def save_generator(path, gen: TrajectoryGenerator, metadata: Optional[dict] = None) -> None:
    meta = {"kind": "generator", "config": asdict(gen.cfg)}
    meta.update(metadata or {})
    weights.save(path, module_arrays(gen, "gen."), meta)


def load_generator(path) -> TrajectoryGenerator:
    arrays, meta = weights.load(path)
    cfg = meta.get("config", {})
    cfg = GanConfig(**cfg) if cfg else GanConfig()
    gen = TrajectoryGenerator(cfg)
    load_module_arrays(gen, {k: v for k, v in arrays.items() if k.startswith("gen.")}, "gen.")
    gen.eval()
    return gen


@torch.no_grad()
def evaluate_displacement(gen: TrajectoryGenerator, windows: Sequence[SceneWindow], chunk: int = 64) -> tuple[float, float]:
    """ADE/FDE of the zero-noise prediction, averaged over vehicles."""
    total_ade = total_fde = 0.0
    count = 0
    for i in range(0, len(windows), chunk):
        obs, fut, scenes = collate(windows[i : i + chunk])
        z = torch.zeros(obs.shape[0], gen.cfg.z_dim, dtype=DTYPE)
        pred = gen(obs, z, scenes).numpy()
        dist = np.linalg.norm(pred - fut.numpy(), axis=-1)
        total_ade += dist.mean(axis=1).sum()
        total_fde += dist[:, -1].sum()
        count += obs.shape[0]
    return total_ade / count, total_fde / count


@torch.no_grad()
def generate_next_position(
    gen: TrajectoryGenerator,
    history: np.ndarray,
    z: Optional[torch.Tensor] = None,
    generator: Optional[torch.Generator] = None,
) -> np.ndarray:
    """Next ``(x, y)`` for every vehicle of one scene from its recent history.

    ``history`` is ``(vehicles, frames, 2)``; fewer than ``o_l`` frames are
    padded by repeating the earliest one. Only the first decoded step is
    computed since later steps cannot influence it.
    """
    hist = np.asarray(history, dtype=np.float64)
    o_l = gen.cfg.o_l
    if hist.shape[1] < o_l:
        pad = np.repeat(hist[:, :1], o_l - hist.shape[1], axis=1)
        hist = np.concatenate([pad, hist], axis=1)
    obs = torch.from_numpy(np.ascontiguousarray(hist[:, -o_l:]))
    if z is None:
        z = gen.sample_z(obs.shape[0], generator)
    return gen(obs, z, None, steps=1)[:, 0].numpy()
