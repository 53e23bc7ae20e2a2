"""Global critics hosted at the RIC.

``AttentionCritic`` embeds each agent's (observation, action), lets every agent
attend over the others' value vectors, and feeds (own embedding, attended
summary) into a per-agent Q head. ``BaselineCritic`` is a plain joint-input MLP
with one output per agent.

Both take observations (N, B, obs_dim) and actions (N, B, L) and return Q of
shape (N, B). ``backward(cache, dQ)`` accumulates parameter gradients and
returns the gradient with respect to the actions.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .actor import ActorNet
from .nn import (MLP, Adam, Linear, MLPSpec, Param, ShapeError, gaussian_policy_sample,
                 leaky_relu, leaky_relu_grad, polyak_update, softmax, softmax_backward)

EMBED_DIM = 128
ATTN_DIM = 32
HEAD_WIDTHS = (256, 256)
BASELINE_WIDTHS = (128, 256, 256)


@dataclass
class AttentionStats:
    """Running check of the softmax law over every attention vector seen."""
    vectors: int = 0
    min_weight: float = np.inf
    max_sum_error: float = 0.0

    def observe(self, alpha: np.ndarray, mask: np.ndarray) -> None:
        """alpha: (B, N, N) with row i the weights agent i puts on the others."""
        b, n = alpha.shape[:2]
        if n < 2:
            return
        self.vectors += b * n
        self.min_weight = min(self.min_weight, float(alpha[:, mask].min()))
        self.max_sum_error = max(self.max_sum_error, float(np.max(np.abs(alpha.sum(axis=-1) - 1.0))))


@dataclass(frozen=True)
class CriticTargetConfig:
    gamma: float = 0.99
    beta_temp: float = 0.2
    polyak_mix: float = 0.005

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.beta_temp < 0:
            raise ValueError("beta_temp must be >= 0")
        if not 0.0 < self.polyak_mix <= 1.0:
            raise ValueError("polyak_mix must lie in (0, 1]")


class _CriticBase:
    n_agents: int
    obs_dim: int
    act_dim: int
    monitor: AttentionStats | None = None

    def attention_params(self) -> list[Param]:
        return []

    def value_params(self) -> list[Param]:
        raise NotImplementedError

    def parameters(self) -> list[Param]:
        return self.attention_params() + self.value_params()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def _check(self, obs: np.ndarray, act: np.ndarray):
        obs = np.asarray(obs, dtype=float)
        act = np.asarray(act, dtype=float)
        if obs.ndim != 3 or act.ndim != 3:
            raise ShapeError("critic inputs must be (agents, batch, features)")
        if obs.shape[0] != self.n_agents or act.shape[0] != self.n_agents:
            raise ShapeError(f"expected data for {self.n_agents} agents, got {obs.shape[0]}/{act.shape[0]}")
        if obs.shape[2] != self.obs_dim or act.shape[2] != self.act_dim:
            raise ShapeError(f"expected obs/act widths {self.obs_dim}/{self.act_dim}, "
                             f"got {obs.shape[2]}/{act.shape[2]}")
        if obs.shape[1] != act.shape[1]:
            raise ShapeError("observation and action batches differ in length")
        return obs, act

    def q_value(self, i: int, obs_all: np.ndarray, act_all: np.ndarray) -> np.ndarray:
        return self.forward(obs_all, act_all)[0][i]

    def forward(self, obs, act, heads: Sequence[int] | None = None):
        raise NotImplementedError

    def backward(self, cache, dq: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class AttentionCritic(_CriticBase):
    def __init__(self, n_agents: int, obs_dim: int, act_dim: int, rng: np.random.Generator | None,
                 embed_dim: int = EMBED_DIM, attn_dim: int = ATTN_DIM,
                 head_widths: tuple[int, ...] = HEAD_WIDTHS):
        self.n_agents, self.obs_dim, self.act_dim = n_agents, obs_dim, act_dim
        self.embed_dim, self.attn_dim = embed_dim, attn_dim
        d_in = obs_dim + act_dim
        self.encoders = [Linear(d_in, embed_dim, rng, name=f"critic.encoder{i}") for i in range(n_agents)]
        self.key = Linear(embed_dim, attn_dim, rng, bias=False, name="critic.key")
        self.query = Linear(embed_dim, attn_dim, rng, bias=False, name="critic.query")
        self.value = Linear(embed_dim, embed_dim, rng, bias=False, name="critic.value")
        spec = MLPSpec((2 * embed_dim, *head_widths, 1), "leaky_relu", "identity")
        self.heads = [MLP(spec, rng, name=f"critic.head{i}") for i in range(n_agents)]
        self.monitor = None

    def attention_params(self) -> list[Param]:
        ps = [p for enc in self.encoders for p in enc.parameters()]
        return ps + self.key.parameters() + self.query.parameters() + self.value.parameters()

    def value_params(self) -> list[Param]:
        return [p for h in self.heads for p in h.parameters()]

    # pieces ---------------------------------------------------------------
    def embed(self, i: int, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        z = np.concatenate([obs, act], axis=-1)
        return leaky_relu(self.encoders[i].forward(z)[0])

    def attention_weights(self, i: int, embeddings: np.ndarray) -> np.ndarray:
        """Softmax over agents j != i of scaled key/query similarity; shape (N-1, ...)."""
        e = np.asarray(embeddings, dtype=float)
        n = e.shape[0]
        if n < 2:
            return np.zeros((0,) + e.shape[1:-1])
        k = e @ self.key.weight.value.T
        q = e[i] @ self.query.weight.value.T
        others = [j for j in range(n) if j != i]
        scores = np.einsum("j...d,...d->j...", k[others], q) / np.sqrt(self.attn_dim)
        return softmax(scores, axis=0)

    def values(self, embeddings: np.ndarray) -> np.ndarray:
        return leaky_relu(np.asarray(embeddings) @ self.value.weight.value.T)

    @staticmethod
    def other_agents_info(i: int, values: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """x_i = sum over j != i of alpha_j * v_j."""
        others = [j for j in range(values.shape[0]) if j != i]
        if not others:
            return np.zeros(values.shape[1:])
        return np.einsum("j...,j...h->...h", alpha, values[others])

    # full pass ---------------------------------------------------------------
    def forward(self, obs, act, heads: Sequence[int] | None = None):
        """Q for every agent; with ``heads`` only those rows are computed (others are 0)."""
        obs, act = self._check(obs, act)
        n, b = obs.shape[:2]
        z = np.concatenate([obs, act], axis=-1)
        pre = np.stack([enc.forward(z[i])[0] for i, enc in enumerate(self.encoders)])
        e = leaky_relu(pre)                                                   # (N, B, H)
        eb = e.transpose(1, 0, 2)                                             # (B, N, H)
        kk = eb @ self.key.weight.value.T                                     # (B, N, d)
        qq = eb @ self.query.weight.value.T
        vpre = eb @ self.value.weight.value.T
        v = leaky_relu(vpre)
        mask = ~np.eye(n, dtype=bool)                                         # [i, j] true for j != i
        if n > 1:
            scores = (qq @ kk.transpose(0, 2, 1)) / np.sqrt(self.attn_dim)   # (B, N, N)
            scores[:, ~mask] = -np.inf
            alpha = softmax(scores, axis=-1)                                  # zero diagonal
            x = (alpha @ v).transpose(1, 0, 2)                                # (N, B, H)
        else:
            alpha = np.zeros((b, n, n))
            x = np.zeros_like(e)
        if self.monitor is not None:
            self.monitor.observe(alpha, mask)
        q = np.zeros((n, b))
        head_caches = [None] * n
        for i in range(n) if heads is None else heads:
            out, head_caches[i] = self.heads[i].forward(np.concatenate([e[i], x[i]], axis=-1))
            q[i] = out[:, 0]
        cache = dict(z=z, pre=pre, e=e, kk=kk, qq=qq, vpre=vpre, v=v, alpha=alpha, heads=head_caches)
        return q, cache

    def backward(self, cache, dq: np.ndarray) -> np.ndarray:
        n = self.n_agents
        h = self.embed_dim
        e, kk, qq, v, alpha = cache["e"], cache["kk"], cache["qq"], cache["v"], cache["alpha"]
        de = np.zeros_like(e)
        dx = np.zeros_like(e)
        for i, head in enumerate(self.heads):
            if cache["heads"][i] is None or not np.any(dq[i]):
                continue
            d_in = head.backward(cache["heads"][i], dq[i][:, None])
            de[i] += d_in[:, :h]
            dx[i] = d_in[:, h:]
        if n > 1:
            eb = e.transpose(1, 0, 2)
            dxb = dx.transpose(1, 0, 2)                                       # (B, N, H)
            dv = alpha.transpose(0, 2, 1) @ dxb
            dalpha = dxb @ v.transpose(0, 2, 1)
            dscore = softmax_backward(alpha, dalpha, axis=-1) / np.sqrt(self.attn_dim)
            dqq = dscore @ kk                                                 # (B, N, d)
            dkk = dscore.transpose(0, 2, 1) @ qq
            e2 = eb.reshape(-1, self.embed_dim)
            self.query.weight.grad += dqq.reshape(-1, self.attn_dim).T @ e2
            self.key.weight.grad += dkk.reshape(-1, self.attn_dim).T @ e2
            deb = dqq @ self.query.weight.value + dkk @ self.key.weight.value
            dvpre = dv * leaky_relu_grad(cache["vpre"])
            self.value.weight.grad += dvpre.reshape(-1, self.embed_dim).T @ e2
            deb += dvpre @ self.value.weight.value
            de += deb.transpose(1, 0, 2)
        dpre = de * leaky_relu_grad(cache["pre"])
        dz = np.stack([enc.backward(cache["z"][i], dpre[i]) for i, enc in enumerate(self.encoders)])
        return dz[..., self.obs_dim:]


class BaselineCritic(_CriticBase):
    """Joint (obs, action) MLP shared by all agents, one linear output per agent."""

    def __init__(self, n_agents: int, obs_dim: int, act_dim: int, rng: np.random.Generator | None,
                 widths: tuple[int, ...] = BASELINE_WIDTHS):
        self.n_agents, self.obs_dim, self.act_dim = n_agents, obs_dim, act_dim
        d_in = n_agents * (obs_dim + act_dim)
        self.trunk = MLP(MLPSpec((d_in, *widths), "tanh", "tanh"), rng, name="baseline.trunk")
        self.out = Linear(widths[-1], n_agents, rng, name="baseline.out")
        self.monitor = None

    def value_params(self) -> list[Param]:
        return self.trunk.parameters() + self.out.parameters()

    def forward(self, obs, act, heads: Sequence[int] | None = None):
        obs, act = self._check(obs, act)
        z = np.concatenate([obs, act], axis=-1)                    # (N, B, D)
        joint = np.concatenate(list(z), axis=-1)                   # (B, N*D), agent order
        hdn, c_trunk = self.trunk.forward(joint)
        out, c_out = self.out.forward(hdn)
        return out.T.copy(), (c_trunk, c_out)

    def backward(self, cache, dq: np.ndarray) -> np.ndarray:
        c_trunk, c_out = cache
        dh = self.out.backward(c_out, np.asarray(dq).T)
        djoint = self.trunk.backward(c_trunk, dh)
        d = self.obs_dim + self.act_dim
        dz = np.stack([djoint[:, i * d:(i + 1) * d] for i in range(self.n_agents)])
        return dz[..., self.obs_dim:]


def baseline_q_value(critic: BaselineCritic, i: int, obs_all, act_all) -> np.ndarray:
    return critic.forward(obs_all, act_all)[0][i]


# ---------------------------------------------------------------- training

@dataclass
class CriticTrainer:
    """Online critic, its Polyak target, and one optimizer per parameter group.

    The attention group (encoders and key/query/value maps) steps before the
    Q-head group; ``order`` records the sequence for auditing.
    """
    critic: _CriticBase
    lr: float = 1e-4
    target: _CriticBase = field(init=False)
    opt_attention: Adam | None = field(init=False)
    opt_value: Adam = field(init=False)
    order: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.target = copy.deepcopy(self.critic)
        att = self.critic.attention_params()
        self.opt_attention = Adam(att, lr=self.lr) if att else None
        self.opt_value = Adam(self.critic.value_params(), lr=self.lr)


@dataclass
class CriticLoss:
    loss: float
    targets: np.ndarray
    q: np.ndarray


def td_targets(trainer: CriticTrainer, actors: Sequence[ActorNet], rewards: np.ndarray,
               next_obs: np.ndarray, tcfg: CriticTargetConfig, rng: np.random.Generator) -> np.ndarray:
    """y_i = r_i + gamma * Qbar_i(s', a') - beta * log pi_i(a'|s'), a' drawn from the current policies."""
    n = len(actors)
    next_act = np.empty(next_obs.shape[:2] + (trainer.critic.act_dim,))
    logp = np.empty(next_obs.shape[:2])
    beta = np.empty((n, 1))
    for i, actor in enumerate(actors):
        mean, log_std, _ = actor.forward(next_obs[i])
        s = gaussian_policy_sample(mean, log_std, rng)
        next_act[i], logp[i] = s.action, s.log_prob
        beta[i] = actor.beta if actor.auto_temperature else tcfg.beta_temp
    q_next, _ = trainer.target.forward(next_obs, next_act)
    return rewards + tcfg.gamma * q_next - beta * logp


def td_loss(critic: _CriticBase, obs, act, targets) -> float:
    q, _ = critic.forward(obs, act)
    return float(np.sum(np.mean((targets - q) ** 2, axis=1)))


def critic_update(trainer: CriticTrainer, actors: Sequence[ActorNet], obs: np.ndarray, act: np.ndarray,
                  rewards: np.ndarray, next_obs: np.ndarray, tcfg: CriticTargetConfig,
                  rng: np.random.Generator, targets: np.ndarray | None = None) -> CriticLoss:
    """One TD step on all critic parameters, then a Polyak step on the target copy.

    Arrays are agent-major: obs (N, B, D), act (N, B, L), rewards (N, B).
    """
    critic = trainer.critic
    obs, act = critic._check(obs, act)
    rewards = np.asarray(rewards, dtype=float)
    if obs.shape[1] == 0:
        raise ValueError("critic_update needs a non-empty batch")
    if rewards.shape != obs.shape[:2] or next_obs.shape != obs.shape:
        raise ShapeError("batch rows are misaligned across observations, rewards and next observations")
    if targets is None:
        targets = td_targets(trainer, actors, rewards, next_obs, tcfg, rng)
    b = obs.shape[1]
    critic.zero_grad()
    q, cache = critic.forward(obs, act)
    loss = float(np.sum(np.mean((targets - q) ** 2, axis=1)))
    critic.backward(cache, -2.0 * (targets - q) / b)
    if trainer.opt_attention is not None:
        trainer.opt_attention.step()
        trainer.order.append("attention")
    trainer.opt_value.step()
    trainer.order.append("critic")
    polyak_update(trainer.target.parameters(), critic.parameters(), tcfg.polyak_mix)
    return CriticLoss(loss, targets, q)


def critic_action_fn(critic: _CriticBase, i: int, obs_all: np.ndarray, act_all: np.ndarray):
    """Q_i and dQ_i/da_i as a function of agent i's action, other agents held fixed."""
    def fn(_obs_i: np.ndarray, a_i: np.ndarray):
        acts = act_all.copy()
        acts[i] = a_i
        q, cache = critic.forward(obs_all, acts, heads=[i])
        dq = np.zeros_like(q)
        dq[i] = 1.0
        d_act = critic.backward(cache, dq)
        critic.zero_grad()
        return q[i], d_act[i]
    return fn
