"""Rainbow-style Q-learning: noisy dueling network, double-Q targets and
prioritized replay with importance weights."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import weights
from .nn import DTYPE, GRAD_CLIP, NoisyLinear, clip_gradients, linear, load_module_arrays, module_arrays

N_ACTIONS = 3


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.95
    lr: float = 1e-4
    batch: int = 64
    capacity: int = 100_000
    sync_every: int = 2000
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    warmup: int = 1000
    total_steps: int = 100_000
    hidden: int = 256
    priority_eps: float = 1e-6

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must satisfy 0 < gamma <= 1")
        if self.batch < 1 or self.capacity < self.batch:
            raise ValueError("need 1 <= batch <= capacity")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


class QNetwork(nn.Module):
    """Two noisy ReLU layers feeding value and advantage heads."""

    def __init__(self, obs_dim: int, n_actions: int = N_ACTIONS, hidden: int = 256):
        super().__init__()
        self.obs_dim = obs_dim
        self.fc1 = NoisyLinear(obs_dim, hidden)
        self.fc2 = NoisyLinear(hidden, hidden)
        self.value = linear(hidden, 1)
        self.advantage = linear(hidden, n_actions)

    def reset_noise(self, generator: Optional[torch.Generator] = None) -> None:
        self.fc1.reset_noise(generator)
        self.fc2.reset_noise(generator)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation has {obs.shape[-1]} entries, network expects {self.obs_dim}")
        h = F.relu(self.fc2(F.relu(self.fc1(obs))))
        a = self.advantage(h)
        return self.value(h) + a - a.mean(dim=-1, keepdim=True)


def q_forward(net: QNetwork, obs, mode: str = "eval", generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Q-values; ``train`` mode draws fresh layer noise first, ``eval`` uses mean weights."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    net.train(mode == "train")
    if mode == "train":
        net.reset_noise(generator)
    return net(torch.as_tensor(obs, dtype=DTYPE))


def select_action(q_values) -> int:
    """Greedy action; ties resolve to the lowest index."""
    return int(np.argmax(np.asarray(q_values)))


@torch.no_grad()
def td_target(rewards, dones, next_obs, online: QNetwork, target: QNetwork, gamma: float) -> torch.Tensor:
    """Double-Q target: the online net picks the next action, the target net scores it."""
    rewards = torch.as_tensor(rewards, dtype=DTYPE)
    dones = torch.as_tensor(dones, dtype=DTYPE)
    best = online(torch.as_tensor(next_obs, dtype=DTYPE)).argmax(dim=-1, keepdim=True)
    q_next = target(torch.as_tensor(next_obs, dtype=DTYPE)).gather(-1, best).squeeze(-1)
    return rewards + gamma * (1.0 - dones) * q_next


class SumTree:
    """Binary tree of priorities; leaf ``i`` lives at ``capacity + i``."""

    def __init__(self, capacity: int):
        size = 1
        while size < capacity:
            size *= 2
        self.capacity = capacity
        self.size = size
        self.tree = np.zeros(2 * size)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def __getitem__(self, i: int) -> float:
        return float(self.tree[self.size + i])

    def leaves(self, n: Optional[int] = None) -> np.ndarray:
        return self.tree[self.size : self.size + (self.capacity if n is None else n)]

    def update(self, i: int, value: float) -> None:
        if value < 0:
            raise ValueError("priorities must be non-negative")
        k = self.size + i
        self.tree[k] = value
        k //= 2
        while k >= 1:
            self.tree[k] = self.tree[2 * k] + self.tree[2 * k + 1]
            k //= 2

    def find(self, mass: float) -> int:
        """Leaf index whose cumulative-priority interval contains ``mass``."""
        k = 1
        while k < self.size:
            left = self.tree[2 * k]
            if mass < left:
                k = 2 * k
            else:
                mass -= left
                k = 2 * k + 1
        return k - self.size


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, alpha: float = 0.6, eps: float = 1e-6):
        self.capacity, self.alpha, self.eps = capacity, alpha, eps
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.tree = SumTree(capacity)
        self.max_priority = 1.0
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        i = self.pos
        self.obs[i], self.next_obs[i] = obs, next_obs
        self.actions[i], self.rewards[i], self.dones[i] = action, reward, float(done)
        self.tree.update(i, self.max_priority**self.alpha)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves(self.size)
        return leaves / leaves.sum()

    def sample(self, batch: int, beta: float, rng: np.random.Generator):
        """Stratified proportional sample; returns ``(batch dict, indices, weights)``."""
        if self.size < batch:
            raise RuntimeError(f"replay buffer holds {self.size} transitions, need {batch} to sample")
        total = self.tree.total
        seg = total / batch
        idx = np.empty(batch, dtype=np.int64)
        for k in range(batch):
            j = self.tree.find(rng.uniform(k * seg, (k + 1) * seg))
            idx[k] = min(j, self.size - 1)
        p = self.tree.leaves()[idx] / total
        w = (self.size * p) ** (-beta)
        w /= w.max()
        data = {
            "obs": self.obs[idx], "actions": self.actions[idx], "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx], "dones": self.dones[idx],
        }
        return data, idx, w

    def update_priorities(self, idx, td_errors) -> None:
        for i, e in zip(idx, np.abs(td_errors)):
            p = float(e) + self.eps
            self.tree.update(int(i), p**self.alpha)
            self.max_priority = max(self.max_priority, p)


class RainbowAgent:
    def __init__(self, obs_dim: int, cfg: AgentConfig = AgentConfig(), seed: int = 0):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.seed = seed
        torch.manual_seed(seed)
        self.online = QNetwork(obs_dim, N_ACTIONS, cfg.hidden)
        self.target = copy.deepcopy(self.online)
        self.noise = torch.Generator().manual_seed(seed)
        self.rng = np.random.default_rng(seed)
        self.reset_training_state()

    def reset_training_state(self) -> None:
        self.optimizer = torch.optim.Adam(self.online.parameters(), lr=self.cfg.lr)
        self.buffer = ReplayBuffer(self.cfg.capacity, self.obs_dim, self.cfg.alpha, self.cfg.priority_eps)
        self.env_steps = 0
        self.train_steps = 0

    @property
    def optimizer_steps(self) -> int:
        states = self.optimizer.state_dict()["state"]
        return int(next(iter(states.values()))["step"]) if states else 0

    def beta(self) -> float:
        frac = min(1.0, self.env_steps / max(1, self.cfg.total_steps))
        return self.cfg.beta_start + frac * (self.cfg.beta_end - self.cfg.beta_start)

    def q_values(self, obs, mode: str = "eval") -> np.ndarray:
        with torch.no_grad():
            return q_forward(self.online, obs, mode, self.noise).numpy()

    def act(self, obs, explore: bool = True) -> int:
        return select_action(self.q_values(obs, "train" if explore else "eval"))

    def observe(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        self.buffer.add(obs, action, reward, next_obs, done)
        self.env_steps += 1

    @property
    def ready(self) -> bool:
        return len(self.buffer) >= max(self.cfg.warmup, self.cfg.batch)

    def train_step(self) -> float:
        """One prioritized double-Q update; returns the weighted Huber loss."""
        if not self.ready:
            raise RuntimeError("warmup not complete; keep collecting transitions")
        cfg = self.cfg
        batch, idx, w = self.buffer.sample(cfg.batch, self.beta(), self.rng)
        self.online.train()
        self.target.train()
        self.online.reset_noise(self.noise)
        self.target.reset_noise(self.noise)
        y = td_target(batch["rewards"], batch["dones"], batch["next_obs"], self.online, self.target, cfg.gamma)
        q = self.online(torch.from_numpy(batch["obs"])).gather(1, torch.from_numpy(batch["actions"]).unsqueeze(1)).squeeze(1)
        td = q - y
        loss = (torch.from_numpy(w) * F.smooth_l1_loss(q, y, reduction="none")).mean()
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite Q loss at train step {self.train_steps}: {loss.item()!r}")
        self.optimizer.zero_grad()
        loss.backward()
        clip_gradients(self.online.parameters(), GRAD_CLIP)
        self.optimizer.step()
        self.buffer.update_priorities(idx, td.detach().numpy())
        self.train_steps += 1
        if self.train_steps % cfg.sync_every == 0:
            self.sync_target()
        return loss.item()

    def sync_target(self) -> None:
        self.target.load_state_dict(self.online.state_dict())

    # persistence ---------------------------------------------------------

    def save(self, path, mode: str = "", extra: Optional[dict] = None) -> None:
        arrays = module_arrays(self.online, "online.")
        arrays.update(module_arrays(self.target, "target."))
        meta = {
            "kind": "agent",
            "obs_dim": self.obs_dim,
            "config": asdict(self.cfg),
            "config_hash": self.cfg.digest(),
            "iterations": self.env_steps,
            "train_steps": self.train_steps,
            "mode": mode,
        }
        meta.update(extra or {})
        weights.save(path, arrays, meta)

    def load_weights(self, arrays: dict) -> None:
        load_module_arrays(self.online, {k: v for k, v in arrays.items() if k.startswith("online.")}, "online.")
        load_module_arrays(self.target, {k: v for k, v in arrays.items() if k.startswith("target.")}, "target.")

    @classmethod
    def load(cls, path, cfg: Optional[AgentConfig] = None, seed: int = 0) -> "RainbowAgent":
        arrays, meta = weights.load(path)
        cfg = cfg or AgentConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["config"].items()})
        agent = cls(int(meta["obs_dim"]), cfg, seed)
        agent.load_weights(arrays)
        agent.metadata = meta
        return agent


def transfer_init(path, obs_dim: int, cfg: AgentConfig = AgentConfig(), seed: int = 0) -> RainbowAgent:
    """Start a new agent from pretrained weights with an empty buffer and fresh optimizer."""
    arrays, meta = weights.load(path)
    if int(meta.get("obs_dim", obs_dim)) != obs_dim:
        raise ValueError(f"weight shape mismatch: checkpoint obs_dim {meta.get('obs_dim')} != environment {obs_dim}")
    agent = RainbowAgent(obs_dim, cfg, seed)
    agent.load_weights(arrays)
    agent.reset_training_state()
    agent.metadata = meta
    return agent
