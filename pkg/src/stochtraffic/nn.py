"""Small float64 neural toolkit shared by the trajectory GAN and the Q-agent.

Layers are plain ``torch.nn.Module`` subclasses so autograd supplies the
backward pass; :func:`grad_check` is the independent finite-difference
oracle every layer is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
GRAD_CLIP = 10.0


def check_finite(t: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise FloatingPointError(f"non-finite values in {what}: {t.detach().flatten()[:8].tolist()}")
    return t


def linear(in_features: int, out_features: int) -> nn.Linear:
    """Dense layer, weights and bias uniform in +-1/sqrt(fan_in)."""
    layer = nn.Linear(in_features, out_features, dtype=DTYPE)
    bound = 1.0 / math.sqrt(in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound)
        layer.bias.uniform_(-bound, bound)
    return layer


def mlp(sizes: Sequence[int], final_activation: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(linear(a, b))
        if final_activation or i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _scaled_noise(size: int, generator: Optional[torch.Generator]) -> torch.Tensor:
    u = torch.randn(size, dtype=DTYPE, generator=generator)
    return u.sign() * u.abs().sqrt()


class NoisyLinear(nn.Module):
    """Linear layer with learned factorized Gaussian weight noise.

    In training mode the effective weights are ``mu + sigma * eps`` using
    the noise drawn by the last :meth:`reset_noise`; eval mode uses ``mu``.
    """

    def __init__(self, in_features: int, out_features: int, sigma_0: float = 0.5):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        bound = 1.0 / math.sqrt(in_features)
        self.weight_mu = nn.Parameter(torch.empty(out_features, in_features, dtype=DTYPE).uniform_(-bound, bound))
        self.weight_sigma = nn.Parameter(torch.full((out_features, in_features), sigma_0 * bound, dtype=DTYPE))
        self.bias_mu = nn.Parameter(torch.empty(out_features, dtype=DTYPE).uniform_(-bound, bound))
        self.bias_sigma = nn.Parameter(torch.full((out_features,), sigma_0 * bound, dtype=DTYPE))
        self.register_buffer("eps_in", torch.zeros(in_features, dtype=DTYPE))
        self.register_buffer("eps_out", torch.zeros(out_features, dtype=DTYPE))

    def reset_noise(self, generator: Optional[torch.Generator] = None) -> None:
        self.eps_in.copy_(_scaled_noise(self.in_features, generator))
        self.eps_out.copy_(_scaled_noise(self.out_features, generator))

    def effective_weights(self) -> tuple[torch.Tensor, torch.Tensor]:
        if not self.training:
            return self.weight_mu, self.bias_mu
        eps_w = torch.outer(self.eps_out, self.eps_in)
        return self.weight_mu + self.weight_sigma * eps_w, self.bias_mu + self.bias_sigma * self.eps_out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w, b = self.effective_weights()
        return nn.functional.linear(x, w, b)


class LSTMCell(nn.Module):
    """Gated recurrent cell (input, forget, output, candidate).

    Gate rows are stacked in that order inside ``weight_ih``/``weight_hh``.
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size, self.hidden_size = input_size, hidden_size
        bound = 1.0 / math.sqrt(hidden_size)
        self.weight_ih = nn.Parameter(torch.empty(4 * hidden_size, input_size, dtype=DTYPE).uniform_(-bound, bound))
        self.weight_hh = nn.Parameter(torch.empty(4 * hidden_size, hidden_size, dtype=DTYPE).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.empty(4 * hidden_size, dtype=DTYPE).uniform_(-bound, bound))

    def initial_state(self, batch: int) -> tuple[torch.Tensor, torch.Tensor]:
        z = torch.zeros(batch, self.hidden_size, dtype=DTYPE)
        return z, z.clone()

    def gates(self, x: torch.Tensor, h: torch.Tensor):
        pre = x @ self.weight_ih.T + h @ self.weight_hh.T + self.bias
        i, f, o, g = pre.chunk(4, dim=-1)
        return torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o), torch.tanh(g)

    def forward(self, x: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor]):
        h, c = state
        i, f, o, g = self.gates(x, h)
        c = f * c + i * g
        h = o * torch.tanh(c)
        return h, c


def zero_parameters(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def clip_gradients(params: Iterable[torch.Tensor], max_norm: float = GRAD_CLIP) -> float:
    return float(nn.utils.clip_grad_norm_(list(params), max_norm))


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    tolerance: float = 1e-5,
    h: float = 1e-6,
    analytic: Optional[Sequence[torch.Tensor]] = None,
    floor: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare gradients of scalar ``fn`` with central finite differences.

    ``analytic`` defaults to autograd's gradients. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``. With ``max_entries`` only a seeded
    random subset of coordinates per parameter is perturbed.
    """
    params = list(params)
    if analytic is None:
        for p in params:
            p.grad = None
        out = fn()
        if out.numel() != 1:
            raise ValueError("fn must return a scalar")
        analytic = torch.autograd.grad(out, params, allow_unused=True)
        analytic = [torch.zeros_like(p) if g is None else g for p, g in zip(params, analytic)]
    rng = np.random.default_rng(seed)
    worst, checked = 0.0, 0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat, gflat = p.view(-1), g.reshape(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and idx.size > max_entries:
                idx = rng.choice(idx, size=max_entries, replace=False)
            for k in idx:
                orig = flat[k].item()
                flat[k] = orig + h
                up = fn().item()
                flat[k] = orig - h
                down = fn().item()
                flat[k] = orig
                num = (up - down) / (2 * h)
                a = gflat[k].item()
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
                checked += 1
    return GradCheckReport(worst, tolerance, checked)


def module_arrays(module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Parameters and buffers as float64 numpy arrays keyed by dotted name."""
    out = {}
    for name, t in module.state_dict().items():
        out[prefix + name] = t.detach().cpu().numpy().astype(np.float64, copy=True)
    return out


def load_module_arrays(module: nn.Module, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    state = module.state_dict()
    expected = {prefix + k: tuple(v.shape) for k, v in state.items()}
    got = {k: tuple(v.shape) for k, v in arrays.items() if k.startswith(prefix)}
    diffs = []
    for name, shape in expected.items():
        if name not in got:
            diffs.append(f"{name}: missing (expected {shape})")
        elif got[name] != shape:
            diffs.append(f"{name}: shape {got[name]} != expected {shape}")
    for name in got:
        if name not in expected:
            diffs.append(f"{name}: unexpected")
    if diffs:
        raise ValueError("weight shape mismatch:\n  " + "\n  ".join(diffs))
    module.load_state_dict({k: torch.from_numpy(arrays[prefix + k].copy()) for k in state})
