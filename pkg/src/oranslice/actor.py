"""Per-DU squashed-gaussian policy and its entropy-regularized update."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nn import (LOG_STD_MAX, LOG_STD_MIN, MLP, Adam, Linear, MLPSpec, Param,
                 clamp_log_std, gaussian_policy_backward, gaussian_policy_sample)

TRUNK_WIDTHS = (128, 256, 256)

# q, dq/da = critic(obs, action)
CriticFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


class ActorNet:
    def __init__(self, agent_id: int, n_slices: int, rng: np.random.Generator | None,
                 trunk_widths: tuple[int, ...] = TRUNK_WIDTHS, lr: float = 1e-4,
                 log_std_range: tuple[float, float] = (LOG_STD_MIN, LOG_STD_MAX),
                 auto_temperature: bool = False, beta_init: float = 0.2):
        self.agent_id = agent_id
        self.n_slices = n_slices
        self.obs_dim = 3 * n_slices
        name = f"actor{agent_id}"
        self.trunk = MLP(MLPSpec((self.obs_dim, *trunk_widths), "tanh", "tanh"), rng, f"{name}.trunk")
        self.mean_head = Linear(trunk_widths[-1], n_slices, rng, name=f"{name}.mean")
        self.log_std_head = Linear(trunk_widths[-1], n_slices, rng, name=f"{name}.log_std")
        self.log_std_range = log_std_range
        self.opt = Adam(self.parameters(), lr=lr)
        self.auto_temperature = auto_temperature
        self.log_beta = Param(f"{name}.log_beta", np.array([np.log(beta_init)]))
        self.target_entropy = -float(n_slices)
        self.beta_opt = Adam([self.log_beta], lr=lr)

    def parameters(self) -> list[Param]:
        return self.trunk.parameters() + self.mean_head.parameters() + self.log_std_head.parameters()

    def checkpoint_params(self) -> list[Param]:
        return self.parameters() + [self.log_beta]

    @property
    def beta(self) -> float:
        return float(np.exp(self.log_beta.value[0]))

    def forward(self, obs: np.ndarray):
        h, c_trunk = self.trunk.forward(obs)
        mean, c_mean = self.mean_head.forward(h)
        raw, c_std = self.log_std_head.forward(h)
        log_std, mask = clamp_log_std(raw, *self.log_std_range)
        return mean, log_std, (c_trunk, c_mean, c_std, mask)

    def backward(self, cache, d_mean: np.ndarray, d_log_std: np.ndarray) -> np.ndarray:
        c_trunk, c_mean, c_std, mask = cache
        dh = self.mean_head.backward(c_mean, d_mean)
        dh = dh + self.log_std_head.backward(c_std, d_log_std * mask)
        return self.trunk.backward(c_trunk, dh)


def act(actor: ActorNet, obs: np.ndarray, deterministic: bool = False,
        rng: np.random.Generator | None = None):
    """Action in (0, 1)^L and its log-probability (NaN in deterministic mode)."""
    obs = np.asarray(obs, dtype=float)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite entries")
    if obs.shape[-1] != actor.obs_dim:
        raise ValueError(f"observation width {obs.shape[-1]} != {actor.obs_dim}")
    mean, log_std, _ = actor.forward(obs)
    if deterministic:
        return 0.5 * (np.tanh(mean) + 1.0), np.full(mean.shape[:-1], np.nan)
    s = gaussian_policy_sample(mean, log_std, rng)
    return s.action, s.log_prob


@dataclass
class PolicyLoss:
    loss: float
    mean_q: float
    entropy: float
    beta: float


def policy_gradient(actor: ActorNet, obs: np.ndarray, critic: CriticFn, beta: float,
                    rng: np.random.Generator | None = None, noise: np.ndarray | None = None):
    """Accumulate d/dθ of mean(β log π(a|s) − Q(s, a)) with a = reparameterized sample."""
    mean, log_std, cache = actor.forward(obs)
    s = gaussian_policy_sample(mean, log_std, rng, noise=noise)
    q, dq_da = critic(obs, s.action)
    b = obs.shape[0]
    loss = float(np.mean(beta * s.log_prob - q))
    d_mean, d_log_std = gaussian_policy_backward(s, -dq_da / b, np.full(b, beta / b))
    actor.backward(cache, d_mean, d_log_std)
    return loss, s, q


def policy_update(actor: ActorNet, obs: np.ndarray, critic: CriticFn, beta: float | None = None,
                  rng: np.random.Generator | None = None) -> PolicyLoss:
    """One Adam step on the policy parameters only."""
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise ValueError("policy_update needs a non-empty (batch, obs) array")
    if beta is None:
        beta = actor.beta
    actor.opt.zero_grad()
    loss, s, q = policy_gradient(actor, obs, critic, beta, rng)
    actor.opt.step()
    entropy = float(-np.mean(s.log_prob))
    if actor.auto_temperature:
        # d/d log_beta of -log_beta * (log pi + target_entropy)
        actor.log_beta.grad[...] = -np.mean(s.log_prob + actor.target_entropy)
        actor.beta_opt.step()
    return PolicyLoss(loss, float(np.mean(q)), entropy, beta)
